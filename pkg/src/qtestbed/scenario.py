"""Scenario documents: defaults, merging and validation.

A scenario is a JSON document layered over the shipped ``defaults.json``.
``validate_scenario`` reports every problem it finds, each tagged with the
field path it concerns, instead of stopping at the first.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InvalidParams, ValidationError
from .network import Topology, bundled_topology_path, topology_from_dict
from .photonics import WdmGrid
from .qkd import Adversary, ProtocolKind
from .sources import BELL_STATES, EmitterParams, FrequencyConverter, SpdcParams, WcpParams
from .timing import DetectorParams

DATA_DIR = Path(__file__).parent / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"
EXPERIMENTS = ("pm", "chsh", "calibrate")


def load_defaults() -> dict:
    with open(DATA_DIR / "defaults.json", encoding="utf-8") as fh:
        return json.load(fh)


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.scenario"))


def scenario_path(ref: str | Path) -> Path:
    """Path of a scenario file, or of the bundled scenario of that name."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = SCENARIO_DIR / f"{ref}.scenario"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")


def load_scenario_document(ref: str | Path) -> dict:
    path = scenario_path(ref)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc.setdefault("name", path.stem)
    return doc


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(doc: dict, dotted: str, value: Any) -> dict:
    """Copy of ``doc`` with the dotted key ``dotted`` set to ``value``."""
    out = copy.deepcopy(doc)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


# --- resolved scenario --------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    mode: str = "random_walk"
    step_sigma_rad: float = 1e-4
    initial: str = "identity"


@dataclass(frozen=True)
class DriftEvent:
    slot: int
    link: tuple[str, str]
    rotation_rad: float


@dataclass(frozen=True)
class ControlPolicy:
    qber_recalibration_threshold: float = 0.03
    calibration_budget_slots: int = 10000
    settle_slots: int = 0
    calibrate_at_start: bool = False
    satellite_pass_windows: tuple = ()  # reserved, no behavior

    def __post_init__(self):
        if not 0.0 < self.qber_recalibration_threshold < 0.5:
            raise ValueError("qber_recalibration_threshold must lie in (0, 0.5)")


@dataclass(frozen=True)
class FeedbackConfig:
    step_scale: float = 0.1
    decay: float = 0.95
    target_qber: float = 0.01
    max_iter: int = 500
    pulses_per_eval: int = 2000


@dataclass(frozen=True)
class ChshConfig:
    settings_deg: tuple = (0.0, 45.0, 22.5, 67.5)
    window_ps: float = 500.0
    bin_ps: int = 100
    search_range_ps: int = 20_000_000
    multi_pair: bool = True
    subtract_accidentals: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    topology: Topology
    experiment: str
    protocol: ProtocolKind
    alice: str
    bob: str
    n_slots: int
    period_ps: int
    sample_fraction: float
    source: Any
    detector: DetectorParams
    gate_ps: float
    converter: FrequencyConverter
    telemetry_interval: int
    policy: ControlPolicy
    feedback: FeedbackConfig
    drift_default: DriftSpec
    link_drifts: dict
    drift_events: tuple
    adversary: Adversary | None
    loss_db: float | None
    fiber: str | None
    chsh: ChshConfig
    export_tags: bool
    document: dict = field(repr=False, default_factory=dict)

    def drift_for(self, a: str, b: str) -> DriftSpec:
        return self.link_drifts.get((a, b), self.drift_default)

    @property
    def quantum_links(self) -> list[tuple[str, str]]:
        """Links whose polarization drifts: the PM route, or both CHSH arms."""
        if self.experiment == "chsh":
            hub = self.topology.hub
            return [(hub, self.alice), (hub, self.bob)]
        return [(self.alice, self.bob)]


# --- validation ------------------------------------------------------------------

class _Errors:
    def __init__(self):
        self.items: list[tuple[str, str]] = []

    def add(self, path: str, msg: str) -> None:
        self.items.append((path, msg))


def _num(errs: _Errors, doc: dict, key: str, path: str, *, lo=None, hi=None, lo_open=False,
         integer=False, allow_none=False):
    v = doc.get(key)
    p = f"{path}{key}"
    if v is None:
        if not allow_none:
            errs.add(p, "required")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        errs.add(p, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
        return None
    if not math.isfinite(v):
        errs.add(p, "must be finite")
        return None
    if lo is not None and (v <= lo if lo_open else v < lo):
        errs.add(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        return None
    if hi is not None and v > hi:
        errs.add(p, f"must be <= {hi}, got {v}")
        return None
    return v


def _topology(errs: _Errors, ref) -> Topology | None:
    if isinstance(ref, str):
        path = Path(ref)
        if not path.exists():
            path = bundled_topology_path(ref)
        try:
            with open(path, encoding="utf-8") as fh:
                tdoc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            errs.add("topology", f"cannot load topology {ref!r}: {exc}")
            return None
    elif isinstance(ref, dict):
        tdoc = ref
    else:
        errs.add("topology", "expected a topology name, path or inline document")
        return None
    before = len(errs.items)
    if "hub" not in tdoc:
        errs.add("topology.hub", "required")
    for i, link in enumerate(tdoc.get("links", [])):
        lp = f"topology.links[{i}]"
        for end in ("a", "b"):
            if end not in link:
                errs.add(f"{lp}.{end}", "required")
        spans = link.get("spans") or []
        if not spans:
            errs.add(f"{lp}.spans", "at least one span is required")
        for j, span in enumerate(spans):
            sp = f"{lp}.spans[{j}]."
            _num(errs, span, "length_km", sp, lo=0.0, lo_open=True)
            _num(errs, span, "splices", sp, lo=0, integer=True, allow_none=True)
            _num(errs, span, "connectors", sp, lo=0, integer=True, allow_none=True)
    if len(errs.items) > before:
        return None
    try:
        return topology_from_dict(tdoc)
    except (ValueError, KeyError, TypeError, LookupError) as exc:
        errs.add("topology", str(exc))
        return None


def _source(errs: _Errors, doc: dict):
    src = dict(doc.get("source") or {})
    kind = src.pop("type", None)
    sources = doc.get("sources", {})
    if kind not in ("wcp", "spe", "spdc"):
        errs.add("source.type", f"expected one of wcp, spe, spdc, got {kind!r}")
        return None
    params = dict(sources.get(kind, {}))
    params.update(src)
    try:
        if kind == "wcp":
            return WcpParams(float(params["mean_photon_number"]), float(params["wavelength_nm"]))
        if kind == "spe":
            return EmitterParams(**{k: float(params[k]) for k in
                                    ("zpl_nm", "fwhm_nm", "g2_zero", "lifetime_ns", "brightness_p1")})
        if params.get("bell_state") not in BELL_STATES:
            errs.add("source.bell_state", f"expected one of {BELL_STATES}")
            return None
        grid = WdmGrid(float(params["degeneracy_nm"]), float(params["spacing_ghz"]),
                       int(params["n_pairs"]))
        return SpdcParams(float(params["pair_probability"]), grid, params["bell_state"])
    except KeyError as exc:
        errs.add(f"source.{exc.args[0]}", "required")
    except TypeError as exc:
        errs.add("source", f"unexpected parameter: {exc}")
    except (InvalidParams, ValueError) as exc:
        errs.add("source", str(exc))
    return None


def _drift(errs: _Errors, d: dict, path: str, base: DriftSpec | None = None) -> DriftSpec | None:
    if not isinstance(d, dict):
        errs.add(path, "expected an object")
        return None
    b = base or DriftSpec()
    mode = d.get("mode", b.mode)
    initial = d.get("initial", b.initial)
    ok = True
    if mode not in ("random_walk", "static"):
        errs.add(f"{path}.mode", f"expected random_walk or static, got {mode!r}")
        ok = False
    if initial not in ("identity", "haar"):
        errs.add(f"{path}.initial", f"expected identity or haar, got {initial!r}")
        ok = False
    merged = {"step_sigma_rad": d.get("step_sigma_rad", b.step_sigma_rad)}
    sigma = _num(errs, merged, "step_sigma_rad", f"{path}.", lo=0.0)
    if sigma is None or not ok:
        return None
    return DriftSpec(mode, float(sigma), initial)


def validate_scenario(doc: dict, defaults: dict | None = None) -> Scenario:
    """Merge ``doc`` over the defaults and validate it fully.

    Raises :class:`ValidationError` listing every violation with its field
    path; returns the resolved :class:`Scenario` otherwise.
    """
    if not isinstance(doc, dict):
        raise ValidationError([("", "scenario must be a JSON object")])
    full = deep_merge(defaults if defaults is not None else load_defaults(), doc)
    errs = _Errors()

    seed = full.get("seed")
    if seed is None:
        errs.add("seed", "required (runs never draw wall-clock entropy)")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errs.add("seed", f"expected a non-negative integer, got {seed!r}")

    topo = _topology(errs, full.get("topology"))

    experiment = full.get("experiment")
    if experiment not in EXPERIMENTS:
        errs.add("experiment", f"expected one of {EXPERIMENTS}, got {experiment!r}")
    try:
        protocol = ProtocolKind(full.get("protocol"))
    except ValueError:
        errs.add("protocol", f"expected one of BB84, B92, SARG04, got {full.get('protocol')!r}")
        protocol = None

    for role in ("alice", "bob"):
        node = full.get(role)
        if node is None:
            errs.add(role, "required")
        elif topo is not None and node not in topo.nodes:
            errs.add(role, f"unknown node {node!r}")
    if full.get("alice") is not None and full.get("alice") == full.get("bob"):
        errs.add("bob", "must differ from alice")

    n_slots = _num(errs, full, "n_slots", "", lo=1, integer=True)
    period_ns = _num(errs, full, "slot_period_ns", "", lo=0.0, lo_open=True)
    sample_fraction = _num(errs, full, "sample_fraction", "", lo=0.0, hi=1.0, lo_open=True)
    loss_db = _num(errs, full, "loss_db", "", lo=0.0, allow_none=True)

    source = _source(errs, full)
    if isinstance(source, EmitterParams) and period_ns is not None:
        try:
            source.check_period(period_ns)
        except InvalidParams as exc:
            errs.add("slot_period_ns", str(exc))
    if experiment == "chsh" and source is not None and not isinstance(source, SpdcParams):
        errs.add("source.type", "chsh experiments need an spdc source")
    if experiment == "pm" and isinstance(source, SpdcParams):
        errs.add("source.type", "prepare-and-measure experiments need a wcp or spe source")

    det_doc = full.get("detector", {})
    vals = [_num(errs, det_doc, k, "detector.", lo=0.0) for k in
            ("efficiency", "dark_rate_hz", "dead_time_ns", "jitter_sigma_ps")]
    gate = _num(errs, det_doc, "gate_ps", "detector.", lo=0.0, lo_open=True)
    detector = None
    if None not in vals:
        if vals[0] > 1.0:
            errs.add("detector.efficiency", "must be <= 1")
        else:
            detector = DetectorParams(vals[0], vals[1], vals[2] * 1e3, vals[3])

    conv_doc = full.get("converter", {})
    converter = None
    try:
        converter = FrequencyConverter(float(conv_doc.get("target_nm", 1550.0)),
                                       float(conv_doc.get("efficiency", 0.5)),
                                       float(conv_doc.get("noise_probability", 0.0)))
    except (InvalidParams, TypeError, ValueError) as exc:
        errs.add("converter", str(exc))

    fiber = full.get("fiber")
    if fiber is not None and topo is not None and fiber not in topo.fiber_kinds:
        errs.add("fiber", f"unknown fiber kind {fiber!r}")

    adversary = None
    adv = full.get("adversary")
    if adv is not None:
        try:
            adversary = Adversary(adv.get("kind", "intercept_resend"),
                                  float(adv.get("probability", 1.0)))
        except (ValueError, AttributeError, TypeError) as exc:
            errs.add("adversary", str(exc))

    tel = full.get("telemetry", {})
    interval = _num(errs, tel, "interval_slots", "telemetry.", lo=1, integer=True)

    pol = full.get("policy", {})
    thr = _num(errs, pol, "qber_recalibration_threshold", "policy.", lo=0.0, hi=0.5, lo_open=True)
    if thr is not None and thr >= 0.5:
        errs.add("policy.qber_recalibration_threshold", "must be < 0.5")
        thr = None
    budget = _num(errs, pol, "calibration_budget_slots", "policy.", lo=0, integer=True)
    settle = _num(errs, pol, "settle_slots", "policy.", lo=0, integer=True)
    policy = None
    if None not in (thr, budget, settle):
        policy = ControlPolicy(thr, budget, settle, bool(pol.get("calibrate_at_start", False)),
                               tuple(pol.get("satellite_pass_windows", ())))

    fb = full.get("feedback", {})
    fb_vals = (_num(errs, fb, "step_scale", "feedback.", lo=0.0, lo_open=True),
               _num(errs, fb, "decay", "feedback.", lo=0.0, hi=1.0, lo_open=True),
               _num(errs, fb, "target_qber", "feedback.", lo=0.0, hi=0.5, lo_open=True),
               _num(errs, fb, "max_iter", "feedback.", lo=0, integer=True),
               _num(errs, fb, "pulses_per_eval", "feedback.", lo=100, integer=True))
    feedback = FeedbackConfig(*fb_vals) if None not in fb_vals else None

    drift_default = _drift(errs, full.get("drift", {}), "drift")
    link_drifts = {}
    for i, entry in enumerate(full.get("links", [])):
        lp = f"links[{i}]"
        a, b = entry.get("from"), entry.get("to")
        for key, node in (("from", a), ("to", b)):
            if node is None:
                errs.add(f"{lp}.{key}", "required")
            elif topo is not None and node not in topo.nodes:
                errs.add(f"{lp}.{key}", f"unknown node {node!r}")
        spec = _drift(errs, entry.get("drift", {}), f"{lp}.drift", drift_default)
        if spec is not None and a is not None and b is not None:
            link_drifts[(a, b)] = spec

    events = []
    for i, ev in enumerate(full.get("drift_events", [])):
        ep = f"drift_events[{i}]."
        slot = _num(errs, ev, "slot", ep, lo=0, integer=True)
        rot = _num(errs, ev, "rotation_rad", ep)
        link = ev.get("link")
        if not (isinstance(link, list) and len(link) == 2):
            errs.add(f"{ep}link", "expected [from, to]")
            continue
        if topo is not None:
            for node in link:
                if node not in topo.nodes:
                    errs.add(f"{ep}link", f"unknown node {node!r}")
        if slot is not None and n_slots is not None and slot >= n_slots:
            errs.add(f"{ep}slot", f"must be < n_slots ({n_slots})")
        if slot is not None and rot is not None:
            events.append(DriftEvent(slot, (link[0], link[1]), float(rot)))

    ch = full.get("chsh", {})
    chsh_cfg = None
    settings = ch.get("settings_deg")
    if not (isinstance(settings, list) and len(settings) == 4
            and all(isinstance(x, (int, float)) and 0 <= x < 180 for x in settings)):
        errs.add("chsh.settings_deg", "expected four angles in [0, 180) degrees")
    ch_vals = (_num(errs, ch, "window_ps", "chsh.", lo=0.0, lo_open=True),
               _num(errs, ch, "bin_ps", "chsh.", lo=1, integer=True),
               _num(errs, ch, "search_range_ps", "chsh.", lo=1, integer=True))
    if None not in ch_vals and isinstance(settings, list):
        chsh_cfg = ChshConfig(tuple(float(x) for x in settings), *ch_vals, bool(ch.get("multi_pair", True)),
                              bool(ch.get("subtract_accidentals", False)))

    if errs.items:
        raise ValidationError(errs.items)
    return Scenario(
        name=str(full.get("name", "scenario")), seed=int(seed), topology=topo,
        experiment=experiment, protocol=protocol, alice=full["alice"], bob=full["bob"],
        n_slots=int(n_slots), period_ps=int(round(period_ns * 1e3)),
        sample_fraction=float(sample_fraction), source=source, detector=detector,
        gate_ps=float(gate), converter=converter, telemetry_interval=int(interval),
        policy=policy, feedback=feedback, drift_default=drift_default,
        link_drifts=link_drifts, drift_events=tuple(sorted(events, key=lambda e: e.slot)),
        adversary=adversary, loss_db=None if loss_db is None else float(loss_db),
        fiber=fiber, chsh=chsh_cfg, export_tags=bool(full.get("export_tags", True)),
        document=full)
