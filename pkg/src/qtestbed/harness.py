"""Slot-based run engine, control-plane policy, telemetry and sweeps.

A run walks the slot axis in telemetry intervals.  Each interval is one
quantum block (split at implanted drift events); when its sifted QBER
exceeds the policy threshold a calibration window is scheduled at the
start of the next interval, followed by optional idle settle slots.  So
``quantum + calibration + idle == n_slots`` by construction.

Polarization drift is held constant within a block and advanced between
blocks with one rotation whose width grows with the square root of the
block length.

All randomness comes from named streams of the run seed, and every
output is serialized with sorted keys and ``repr`` floats, so equal seeds
give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .entanglement import ChshSettings, ChshStack, LeaseTable, chsh
from .errors import TestbedError, ValidationError
from .network import loss_budget, propagation_delay_ps, roadm_route
from .photonics import PolarizationUnitary
from .polarization import (Compensator, DriftProcess, FeedbackReport, drift_advance,
                           feedback_loop, reference_error_probabilities)
from .qkd import (PmChannel, PmRounds, build_report, error_rate, sift, simulate_pm_slots)
from .rng import Streams, derive_seed
from .scenario import Scenario, set_path, validate_scenario
from .timing import IDEAL_CLOCK, TagStream


@dataclass
class TelemetryFrame:
    """Health summary of one slot range.

    ``detector_counts`` holds four click counters: Bob's PAM detectors
    (rectilinear 0/1, diagonal 0/1) in a PM run, or the A+/A-/B+/B-
    detectors in a CHSH run.
    """

    slot_start: int
    slot_end: int
    detector_counts: tuple
    coincidences: int
    sifted: int
    errors: int
    qber: float
    active_leases: int
    compensator_step: float
    reference_error: float
    temperature_c: float | None = None  # placeholder, no sensor model


TELEMETRY_COLUMNS = ("slot_start", "slot_end", "det0", "det1", "det2", "det3", "coincidences",
                     "sifted", "errors", "qber", "active_leases", "compensator_step",
                     "reference_error", "temperature_c")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class RunArtifacts:
    scenario: Scenario
    report: dict
    telemetry: list[TelemetryFrame] = field(default_factory=list)
    tags: dict[str, TagStream] = field(default_factory=dict)
    feedback: dict[str, list[tuple[int, FeedbackReport]]] = field(default_factory=dict)
    rounds: PmRounds | None = None

    def report_json(self) -> str:
        return json.dumps(self.report, sort_keys=True, indent=2) + "\n"

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in _flatten(self.report):
            w.writerow([k, _fmt(v)])
        return buf.getvalue()

    def telemetry_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TELEMETRY_COLUMNS)
        for f in self.telemetry:
            w.writerow([_fmt(x) for x in (f.slot_start, f.slot_end, *f.detector_counts,
                                          f.coincidences, f.sifted, f.errors, f.qber,
                                          f.active_leases, f.compensator_step,
                                          f.reference_error, f.temperature_c)])
        return buf.getvalue()

    def feedback_csv(self, link: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["calibration", "iter", "qber", "accepted"])
        for cal, rep in self.feedback[link]:
            for i, (q, ok) in enumerate(zip(rep.reference_qber_history, rep.accepted_flags)):
                w.writerow([cal, i, repr(float(q)), int(ok)])
        return buf.getvalue()

    def write(self, out_dir: str | Path, fmt: str = "json") -> list[Path]:
        """Write report, telemetry, tag and feedback files; returns their paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        if fmt == "csv":
            files["report.csv"] = self.report_csv()
        else:
            files["report.json"] = self.report_json()
        files["telemetry.csv"] = self.telemetry_csv()
        for node, stream in sorted(self.tags.items()):
            buf = io.StringIO()
            stream.to_csv(buf)
            files[f"tags_{node}.csv"] = buf.getvalue()
        for link in sorted(self.feedback):
            files[f"feedback_{link}.csv"] = self.feedback_csv(link)
        paths = []
        for name, text in files.items():
            p = out / name
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            paths.append(p)
        return paths


def _flatten(d, prefix=""):
    if isinstance(d, dict):
        for k in sorted(d):
            yield from _flatten(d[k], f"{prefix}{k}.")
    elif isinstance(d, list) and d and isinstance(d[0], dict):
        for i, x in enumerate(d):
            yield from _flatten(x, f"{prefix}{i}.")
    else:
        yield prefix[:-1], json.dumps(d) if isinstance(d, list) else d


def _link_name(link: tuple[str, str]) -> str:
    return f"{link[0]}-{link[1]}"


def _plain(x):
    """Convert numpy scalars so that JSON output is stable."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


class _Control:
    """Drift, compensation and calibration bookkeeping for the quantum links."""

    def __init__(self, sc: Scenario, streams: Streams):
        self.sc = sc
        self.streams = streams
        self.drift: dict[tuple[str, str], DriftProcess] = {}
        self.comp: dict[tuple[str, str], Compensator] = {}
        self.feedback: dict[str, list[tuple[int, FeedbackReport]]] = {}
        self.calibrations: list[dict] = []
        for link in sc.quantum_links:
            spec = sc.drift_for(*link)
            start = (PolarizationUnitary.haar(streams["drift"]) if spec.initial == "haar"
                     else PolarizationUnitary.identity())
            self.drift[link] = DriftProcess(spec.step_sigma_rad, spec.mode, start)
            self.comp[link] = Compensator(step_scale=sc.feedback.step_scale, decay=sc.feedback.decay)

    def net(self, link) -> PolarizationUnitary:
        return self.comp[link].correction @ self.drift[link].current

    def advance(self, n_slots: int) -> None:
        for link in self.drift:
            self.drift[link] = drift_advance(self.drift[link], self.streams["drift"], n_slots)

    def implant(self, link, angle: float) -> bool:
        if link not in self.drift:
            return False
        d = self.drift[link]
        self.drift[link] = replace(d, current=PolarizationUnitary.rotation(angle) @ d.current)
        return True

    def calibrate(self, slot_start: int, slot_end: int) -> list[dict]:
        fb = self.sc.feedback
        out = []
        for link in self.drift:
            name = _link_name(link)
            comp = replace(self.comp[link], step_scale=fb.step_scale)
            comp, rep = feedback_loop(self.drift[link], comp, fb.target_qber, fb.max_iter,
                                      fb.pulses_per_eval, self.streams["feedback"])
            self.comp[link] = comp
            cal_index = len(self.calibrations)
            self.feedback.setdefault(name, []).append((cal_index, rep))
            entry = {"index": cal_index, "link": name, "slot_start": slot_start,
                     "slot_end": slot_end, "iterations": rep.iterations,
                     "accepted": rep.accepted, "converged": rep.converged,
                     "final_qber": float(rep.final_qber) if rep.iterations else None}
            self.calibrations.append(entry)
            out.append(entry)
        return out

    def summary(self) -> tuple[float, float]:
        """Mean compensator step and mean exact reference error over links."""
        steps, errs = [], []
        for link in self.drift:
            steps.append(self.comp[link].step_scale)
            eh, ed = reference_error_probabilities(self.drift[link].current,
                                                   self.comp[link].correction)
            errs.append((eh + ed) / 2.0)
        return float(np.mean(steps)), float(np.mean(errs))


def _calibration_window(sc: Scenario, ctl: _Control, slot: int, events: list,
                        acct: dict) -> int:
    w = min(sc.policy.calibration_budget_slots, sc.n_slots - slot)
    for entry in ctl.calibrate(slot, slot + w):
        events.append({"slot": slot, "event": "calibration", **entry})
    acct["calibration"] += w
    slot += w
    settle = min(sc.policy.settle_slots, sc.n_slots - slot)
    if settle:
        events.append({"slot": slot, "event": "settle", "slot_end": slot + settle})
        acct["idle"] += settle
        slot += settle
    return slot


def _run_pm(sc: Scenario, streams: Streams, export_tags: bool) -> RunArtifacts:
    topo = sc.topology
    path = topo.path(sc.alice, sc.bob, sc.fiber)
    background = sum(l.background_rate_hz for l in topo.links_on_path(sc.alice, sc.bob))
    delay = propagation_delay_ps(path)
    base_channel = PmChannel(path=tuple(path), unit_losses=topo.unit_losses, loss_db=sc.loss_db,
                             converter=sc.converter, background_rate_hz=background,
                             delay_ps=delay)
    link = (sc.alice, sc.bob)
    ctl = _Control(sc, streams)
    events: list[dict] = [{"slot": 0, "event": "run_start"}]
    acct = {"quantum": 0, "calibration": 0, "idle": 0}
    frames: list[TelemetryFrame] = []
    parts: list[PmRounds] = []
    tag_parts: list[TagStream] = []
    pending = list(sc.drift_events)
    loss_db, converted = 0.0, False
    calibrate_next = sc.policy.calibrate_at_start
    slot = 0
    while slot < sc.n_slots:
        if calibrate_next:
            calibrate_next = False
            slot = _calibration_window(sc, ctl, slot, events, acct)
            continue
        frame_end = min(sc.n_slots, slot + sc.telemetry_interval)
        cuts = sorted({e.slot for e in pending if slot < e.slot < frame_end}) + [frame_end]
        frame_rounds, counts = [], {"r0": 0, "r1": 0, "d0": 0, "d1": 0}
        start = slot
        for cut in cuts:
            while pending and pending[0].slot <= start:
                ev = pending.pop(0)
                applied = ctl.implant(ev.link, ev.rotation_rad)
                events.append({"slot": start, "event": "drift_event", "link": _link_name(ev.link),
                               "rotation_rad": ev.rotation_rad, "applied": applied})
            channel = replace(base_channel, drift=ctl.drift[link].current,
                              correction=ctl.comp[link].correction)
            data = simulate_pm_slots(sc.protocol, channel, sc.source, sc.detector, cut - start,
                                     sc.adversary, streams, first_slot=start,
                                     period_ps=sc.period_ps, gate_ps=sc.gate_ps)
            loss_db, converted = data.loss_db, data.converted
            frame_rounds.append(data.rounds)
            for k, v in data.detector_counts().items():
                counts[k] += v
            if export_tags:
                tag_parts.append(data.bob_tags(sc.detector, IDEAL_CLOCK, streams["tags"],
                                               period_ps=sc.period_ps, delay_ps=delay,
                                               tagger=sc.bob))
            ctl.advance(cut - start)
            start = cut
        rounds = PmRounds.concat(frame_rounds)
        parts.append(rounds)
        key = sift(sc.protocol, rounds)
        n_err = int(np.count_nonzero(key.alice != key.bob))
        qber = error_rate(key.alice, key.bob) if len(key) else float("nan")
        step, ref_err = ctl.summary()
        frames.append(TelemetryFrame(slot, frame_end, tuple(counts.values()), 0, len(key), n_err,
                                     qber, 0, step, ref_err))
        acct["quantum"] += frame_end - slot
        slot = frame_end
        if len(key) and qber > sc.policy.qber_recalibration_threshold and slot < sc.n_slots:
            events.append({"slot": slot, "event": "qber_threshold_crossed", "qber": qber})
            events.append({"slot": slot, "event": "calibration_scheduled"})
            calibrate_next = True
    events.append({"slot": sc.n_slots, "event": "run_end"})

    all_rounds = PmRounds.concat(parts)
    key_report = build_report(sc.protocol, all_rounds, acct["quantum"], sc.sample_fraction,
                              streams["qber"], loss_db, converted)
    report = {
        "scenario": sc.name, "seed": sc.seed, "experiment": sc.experiment,
        "protocol": sc.protocol.value, "alice": sc.alice, "bob": sc.bob,
        "slots": {"total": sc.n_slots, **acct},
        "key": key_report.to_dict(),
        "calibrations": ctl.calibrations,
        "events": events,
        "telemetry_frames": len(frames),
    }
    tags = {}
    if export_tags:
        tags[sc.bob] = TagStream.merge(tag_parts) if tag_parts else TagStream.empty(sc.bob)
    return RunArtifacts(sc, _plain(report), frames, tags, ctl.feedback, all_rounds)


def _run_chsh(sc: Scenario, streams: Streams, export_tags: bool) -> RunArtifacts:
    topo = sc.topology
    hub = topo.hub
    src = sc.source
    table = LeaseTable(src.grid, topo.roadm)
    lease = table.lease(sc.alice, sc.bob)
    ctl = _Control(sc, streams)
    events: list[dict] = [{"slot": 0, "event": "run_start"},
                          {"slot": 0, "event": "lease", "k": lease.k, "user_a": sc.alice,
                           "user_b": sc.bob}]
    acct = {"quantum": 0, "calibration": 0, "idle": 0}
    slot = 0
    if sc.policy.calibrate_at_start:
        slot = _calibration_window(sc, ctl, slot, events, acct)

    arms = {}
    for user, ch in ((sc.alice, lease.signal), (sc.bob, lease.idler)):
        path = topo.path(hub, user, sc.fiber)
        _, roadm_db = roadm_route(table.roadm, table.source_port, ch)
        loss = loss_budget(path, ch.passband.center_nm, topo.unit_losses) + roadm_db
        arms[user] = (loss, propagation_delay_ps(path))
    la, lb = (hub, sc.alice), (hub, sc.bob)
    stack = ChshStack(
        source=src, loss_a_db=arms[sc.alice][0], loss_b_db=arms[sc.bob][0],
        detector_a=sc.detector, detector_b=sc.detector,
        unitary_a=ctl.net(la), unitary_b=ctl.net(lb),
        delay_a_ps=arms[sc.alice][1], delay_b_ps=arms[sc.bob][1], period_ps=sc.period_ps,
        window_ps=sc.chsh.window_ps, multi_pair=sc.chsh.multi_pair,
        search_range_ps=sc.chsh.search_range_ps, bin_ps=sc.chsh.bin_ps,
        subtract_accidentals=sc.chsh.subtract_accidentals)
    per_setting = (sc.n_slots - slot) // 4
    sink: list = []  # always collected; telemetry needs the singles
    rep = chsh(ChshSettings.degrees(*sc.chsh.settings_deg), None, stack, streams["chsh"], lease,
               slots_per_setting=per_setting, first_slot=slot, tag_sink=sink)
    frames = []
    step, ref_err = ctl.summary()
    for i, n in enumerate(rep.coincidences_per_setting):
        s0 = slot + i * per_setting
        ta, tb = sink[i]
        singles = tuple(int(np.count_nonzero(t.channel == c)) for t in (ta, tb) for c in (0, 1))
        frames.append(TelemetryFrame(s0, s0 + per_setting, singles, n, 0, 0, float("nan"),
                                     len(table.active), step, ref_err))
    acct["quantum"] += 4 * per_setting
    acct["idle"] += sc.n_slots - slot - 4 * per_setting
    events.append({"slot": sc.n_slots, "event": "run_end"})
    report = {
        "scenario": sc.name, "seed": sc.seed, "experiment": sc.experiment,
        "alice": sc.alice, "bob": sc.bob,
        "slots": {"total": sc.n_slots, **acct},
        "lease": {"k": lease.k, "signal_nm": lease.signal.passband.center_nm,
                  "idler_nm": lease.idler.passband.center_nm},
        "arm_loss_db": {sc.alice: arms[sc.alice][0], sc.bob: arms[sc.bob][0]},
        "chsh": rep.to_dict(),
        "calibrations": ctl.calibrations,
        "events": events,
    }
    tags = {}
    if export_tags:
        tags[sc.alice] = TagStream.merge([a for a, _ in sink], tagger=sc.alice)
        tags[sc.bob] = TagStream.merge([b for _, b in sink], tagger=sc.bob)
    return RunArtifacts(sc, _plain(report), frames, tags, ctl.feedback)


def _run_calibrate(sc: Scenario, streams: Streams) -> RunArtifacts:
    ctl = _Control(sc, streams)
    events: list[dict] = [{"slot": 0, "event": "run_start"}]
    acct = {"quantum": 0, "calibration": 0, "idle": 0}
    slot = _calibration_window(sc, ctl, 0, events, acct)
    acct["idle"] += sc.n_slots - slot
    events.append({"slot": sc.n_slots, "event": "run_end"})
    step, ref_err = ctl.summary()
    report = {
        "scenario": sc.name, "seed": sc.seed, "experiment": sc.experiment,
        "slots": {"total": sc.n_slots, **acct},
        "calibrations": ctl.calibrations,
        "converged": all(c["converged"] for c in ctl.calibrations),
        "residual_reference_error": ref_err,
        "events": events,
    }
    return RunArtifacts(sc, _plain(report), [], {}, ctl.feedback)


def run_scenario(sc: Scenario | dict, *, export_tags: bool | None = None) -> RunArtifacts:
    """Run one scenario; deterministic given its seed."""
    if isinstance(sc, dict):
        sc = validate_scenario(sc)
    streams = Streams(sc.seed)
    tags = sc.export_tags if export_tags is None else export_tags
    if sc.experiment == "pm":
        return _run_pm(sc, streams, tags)
    if sc.experiment == "chsh":
        return _run_chsh(sc, streams, tags)
    return _run_calibrate(sc, streams)


# --- sweeps -------------------------------------------------------------------

SWEEP_FIELDS = ("sift_fraction", "qber", "secure_fraction", "detection_fraction",
                "secure_key_per_slot", "raw_rounds", "sifted_length", "loss_db")


def grid_points(grid: dict) -> list[dict]:
    """Expand ``{"points": [...]}`` or ``{dotted_key: [values], ...}`` into points."""
    if "points" in grid:
        points = [dict(p) for p in grid["points"]]
    else:
        keys = list(grid)
        if not keys:
            raise ValueError("parameter grid is empty")
        for k in keys:
            if not isinstance(grid[k], list):
                raise ValueError(f"grid entry {k!r} must be a list of values")
        points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    if not points:
        raise ValueError("parameter grid is empty")
    return points


@dataclass
class SweepRow:
    index: int
    seed: int
    params: dict
    values: dict
    error: str | None = None


def sweep(template: dict, grid: dict, *, master_seed: int | None = None) -> list[SweepRow]:
    """One run per grid point with seeds derived from ``(master seed, point index)``.

    A failing point is recorded with its error and the remaining points
    still run.  Rows come back in grid order.
    """
    points = grid_points(grid)
    master = template.get("seed") if master_seed is None else master_seed
    if master is None:
        raise ValidationError([("seed", "required (runs never draw wall-clock entropy)")])
    rows = []
    for i, point in enumerate(points):
        doc = dict(template)
        for k, v in point.items():
            doc = set_path(doc, k, v)
        seed = derive_seed(master, i)
        doc["seed"] = seed
        try:
            art = run_scenario(validate_scenario(doc), export_tags=False)
            key = art.report.get("key") or {}
            values = {f: key.get(f) for f in SWEEP_FIELDS}
            if "chsh" in art.report:
                values["s_value"] = art.report["chsh"]["s_value"]
            rows.append(SweepRow(i, seed, point, values))
        except (TestbedError, ValueError, LookupError) as exc:
            rows.append(SweepRow(i, seed, point, {}, f"{type(exc).__name__}: {exc}"))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    params = list(dict.fromkeys(k for r in rows for k in r.params))
    values = [k for k in dict.fromkeys(k for r in rows for k in r.values) if k not in params]
    if not any(r.values for r in rows):
        values = [f for f in SWEEP_FIELDS if f not in params]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "seed", *params, *values, "error"])
    for r in rows:
        w.writerow([r.index, r.seed, *(_fmt(r.params.get(p)) for p in params),
                    *(_fmt(r.values.get(v)) for v in values), r.error or ""])
    return buf.getvalue()
