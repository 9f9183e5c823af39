"""Detectors, time tags, clocks, coincidence matching and g2(0) estimation.

All time stamps are integer picoseconds.  Physics (jitter, clock drift) is
computed in floating point and quantized once when a tag is produced.

Sign conventions
----------------
``offset_ps`` in :func:`match_coincidences` and the value returned by
:func:`find_offset` are the delay of stream B relative to stream A: a tag
``tb`` is matched to ``ta`` when ``|(tb - offset) - ta| <= window / 2``.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (InsufficientCounts, InsufficientExchanges, InvalidParams, NoPeak,
                     UnsortedStream)

PPS_PERIOD_PS = 10 ** 12
REF_CLOCK_HZ = 10_000_000
DEFAULT_JITTER_PS = 42.0  # FWHM ~ 99 ps


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.8
    dark_rate_hz: float = 100.0
    dead_time_ps: float = 10_000.0
    jitter_sigma_ps: float = DEFAULT_JITTER_PS

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise InvalidParams("detector efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0 or self.dead_time_ps < 0 or self.jitter_sigma_ps < 0:
            raise InvalidParams("dark rate, dead time and jitter must be non-negative")

    @property
    def jitter_fwhm_ps(self) -> float:
        return self.jitter_sigma_ps * 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class TimeTag:
    t_ps: int
    channel: int
    tagger: str


@dataclass(frozen=True)
class ClockModel:
    """Affine local clock: ``local = true * (1 + drift_ppm * 1e-6) + offset_ps``.

    The clock is disciplined by a 10 MHz reference and a PPS marker every
    10**12 ps; only the resulting offset and drift are modelled.
    """

    offset_ps: int = 0
    drift_ppm: float = 0.0
    pps_period_ps: int = PPS_PERIOD_PS
    ref_rate_hz: int = REF_CLOCK_HZ

    def __post_init__(self):
        if abs(self.drift_ppm) >= 100:
            raise InvalidParams("|drift_ppm| must stay below 100")
        if self.pps_period_ps != PPS_PERIOD_PS or self.ref_rate_hz != REF_CLOCK_HZ:
            raise InvalidParams("reference is fixed at 10 MHz with a 1 s PPS marker")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def to_local(self, true_ps):
        return np.asarray(true_ps, dtype=float) * self.rate + self.offset_ps

    def to_true(self, local_ps):
        return (np.asarray(local_ps, dtype=float) - self.offset_ps) / self.rate

    def pps_markers(self, duration_ps: int) -> np.ndarray:
        """Local-clock readings at each true PPS edge within ``duration_ps``."""
        edges = np.arange(0, duration_ps + 1, self.pps_period_ps, dtype=float)
        return np.rint(self.to_local(edges)).astype(np.int64)


IDEAL_CLOCK = ClockModel()


# --- tag streams ----------------------------------------------------------

@dataclass(frozen=True)
class TagStream:
    """Time tags from one tagger, stored column-wise."""

    t_ps: np.ndarray
    channel: np.ndarray
    tagger: str = ""

    def __post_init__(self):
        t = np.asarray(self.t_ps, dtype=np.int64)
        ch = np.asarray(self.channel, dtype=np.int64)
        if ch.ndim == 0:
            ch = np.full(t.shape, int(ch), dtype=np.int64)
        if t.shape != ch.shape:
            raise ValueError("time and channel columns differ in length")
        object.__setattr__(self, "t_ps", t)
        object.__setattr__(self, "channel", ch)

    @classmethod
    def empty(cls, tagger: str = "") -> "TagStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), tagger)

    @classmethod
    def from_tags(cls, tags: Iterable[TimeTag]) -> "TagStream":
        tags = list(tags)
        taggers = {t.tagger for t in tags}
        if len(taggers) > 1:
            raise ValueError("tags come from more than one tagger")
        return cls(np.array([t.t_ps for t in tags], dtype=np.int64),
                   np.array([t.channel for t in tags], dtype=np.int64),
                   taggers.pop() if taggers else "")

    def __len__(self) -> int:
        return int(self.t_ps.size)

    def __iter__(self):
        for t, c in zip(self.t_ps.tolist(), self.channel.tolist()):
            yield TimeTag(t, c, self.tagger)

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t_ps) >= 0))

    def sorted(self) -> "TagStream":
        order = np.argsort(self.t_ps, kind="stable")
        return TagStream(self.t_ps[order], self.channel[order], self.tagger)

    def select(self, channel: int) -> "TagStream":
        m = self.channel == channel
        return TagStream(self.t_ps[m], self.channel[m], self.tagger)

    def shifted(self, delta_ps: int) -> "TagStream":
        return TagStream(self.t_ps + int(delta_ps), self.channel, self.tagger)

    @staticmethod
    def merge(streams: Sequence["TagStream"], tagger: str | None = None) -> "TagStream":
        if not streams:
            return TagStream.empty(tagger or "")
        t = np.concatenate([s.t_ps for s in streams])
        ch = np.concatenate([s.channel for s in streams])
        order = np.argsort(t, kind="stable")
        return TagStream(t[order], ch[order], tagger if tagger is not None else streams[0].tagger)

    def to_csv(self, dest: str | Path | io.TextIOBase) -> None:
        """Write ``t_ps,channel,tagger`` rows with a one-line header."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                self.to_csv(fh)
            return
        dest.write("t_ps,channel,tagger\n")
        tagger = self.tagger
        dest.writelines(f"{t},{c},{tagger}\n"
                        for t, c in zip(self.t_ps.tolist(), self.channel.tolist()))


def read_tags_csv(src: str | Path | io.TextIOBase) -> dict[str, TagStream]:
    """Read a tag CSV, returning one stream per tagger."""
    if isinstance(src, (str, Path)):
        with open(src, newline="", encoding="utf-8") as fh:
            return read_tags_csv(fh)
    reader = csv.DictReader(src)
    if reader.fieldnames != ["t_ps", "channel", "tagger"]:
        raise ValueError(f"unexpected tag CSV header {reader.fieldnames}")
    cols: dict[str, tuple[list[int], list[int]]] = {}
    for row in reader:
        t, c = cols.setdefault(row["tagger"], ([], []))
        t.append(int(row["t_ps"]))
        c.append(int(row["channel"]))
    return {k: TagStream(np.array(t, np.int64), np.array(c, np.int64), k)
            for k, (t, c) in cols.items()}


# --- detection ------------------------------------------------------------

def dead_time_mask(sorted_times: np.ndarray, dead_time_ps: float) -> np.ndarray:
    """Keep-mask suppressing clicks within ``dead_time_ps`` of the last kept click."""
    n = sorted_times.size
    keep = np.ones(n, dtype=bool)
    if n < 2 or dead_time_ps <= 0:
        return keep
    close = np.diff(sorted_times) <= dead_time_ps
    if not close.any():
        return keep
    # a click far from its predecessor is always kept, so only runs of close
    # clicks need the sequential walk
    edges = np.diff(np.concatenate([[False], close, [False]]).astype(np.int8))
    run_starts = np.flatnonzero(edges == 1)
    run_ends = np.flatnonzero(edges == -1)
    for s, e in zip(run_starts.tolist(), run_ends.tolist()):
        last = sorted_times[s]
        for i in range(s + 1, e + 1):
            t = sorted_times[i]
            if t - last <= dead_time_ps:
                keep[i] = False
            else:
                last = t
    return keep


def detect(arrival_ps, photon_count, det: DetectorParams, clock: ClockModel,
           rng: np.random.Generator, *, channel: int = 0, tagger: str = "",
           gate_ps: float | None = 1000.0, observation: tuple[float, float] | None = None,
           resolution_ps: int = 1) -> TagStream:
    """Clicks of one detector for pulses arriving at true times ``arrival_ps``.

    Each photon clicks independently with probability ``efficiency``.  Dark
    counts are drawn per gate of width ``gate_ps`` centred on each arrival,
    or, for a free-running detector (``gate_ps=None``), uniformly over the
    ``observation`` interval.  Clicks inside the dead time of an earlier
    click are dropped; survivors get gaussian jitter, then the clock's
    affine transform, then quantization to ``resolution_ps``.
    """
    arrival = np.atleast_1d(np.asarray(arrival_ps, dtype=float))
    counts = np.atleast_1d(np.asarray(photon_count, dtype=np.int64))
    if counts.size == 1 and arrival.size > 1:
        counts = np.full(arrival.shape, int(counts[0]))
    photon_t = np.repeat(arrival, counts)
    clicked = photon_t[rng.random(photon_t.size) < det.efficiency]

    rate = det.dark_rate_hz * 1e-12
    if rate == 0.0:
        dark_t = np.zeros(0)
    elif gate_ps is not None:
        n_dark = rng.poisson(rate * gate_ps, size=arrival.size)
        base = np.repeat(arrival, n_dark)
        dark_t = base + (rng.random(base.size) - 0.5) * gate_ps
    else:
        if observation is None:
            observation = (float(arrival.min()), float(arrival.max())) if arrival.size else (0.0, 0.0)
        start, end = observation
        n_dark = rng.poisson(rate * max(0.0, end - start))
        dark_t = start + rng.random(n_dark) * (end - start)

    t = np.sort(np.concatenate([clicked, dark_t]))
    t = t[dead_time_mask(t, det.dead_time_ps)]
    if det.jitter_sigma_ps > 0:
        t = t + rng.normal(0.0, det.jitter_sigma_ps, size=t.size)
    local = clock.to_local(t)
    q = int(resolution_ps)
    tags = (np.floor(local / q) * q).astype(np.int64)
    tags.sort()
    return TagStream(tags, np.full(tags.size, channel, dtype=np.int64), tagger)


# --- coincidences ---------------------------------------------------------

@dataclass(frozen=True)
class CoincidenceReport:
    """Matched tag pairs between streams A and B.

    ``index_a``/``index_b`` point into the input streams; every tag appears
    in at most one pair.
    """

    index_a: np.ndarray
    index_b: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    window_ps: float
    applied_offset_ps: int
    n_a: int
    n_b: int
    accidental_estimate: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.t_a.tolist(), self.t_b.tolist()))

    def __len__(self) -> int:
        return int(self.index_a.size)

    @property
    def unmatched_a(self) -> int:
        return self.n_a - len(self)

    @property
    def unmatched_b(self) -> int:
        return self.n_b - len(self)


def _as_times(stream) -> np.ndarray:
    if isinstance(stream, TagStream):
        return stream.t_ps
    return np.asarray(stream, dtype=np.int64).reshape(-1)


def _check_sorted(t: np.ndarray, name: str) -> None:
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise UnsortedStream(f"stream {name} is not sorted by time")


def _min_spacing(t: np.ndarray) -> float:
    return float(np.diff(t).min()) if t.size > 1 else math.inf


def _greedy_pairs(a: list[int], b: list[int], off: int, half: float):
    ia: list[int] = []
    ib: list[int] = []
    i = j = 0
    na, nb = len(a), len(b)
    inf = math.inf
    while i < na and j < nb:
        d = b[j] - off - a[i]
        if d < -half:
            j += 1
            continue
        if d > half:
            i += 1
            continue
        ad = abs(d)
        alt_b = abs(b[j + 1] - off - a[i]) if j + 1 < nb else inf
        alt_a = abs(b[j] - off - a[i + 1]) if i + 1 < na else inf
        if ad <= alt_b and ad <= alt_a:
            ia.append(i)
            ib.append(j)
            i += 1
            j += 1
        elif alt_b < alt_a:
            j += 1
        elif alt_a < alt_b:
            i += 1
        elif a[i] <= b[j] - off:
            i += 1
        else:
            j += 1
    return ia, ib


def match_coincidences(a, b, window_ps: float, offset_ps: int = 0) -> CoincidenceReport:
    """Greedy nearest-neighbour coincidence matching in linear time.

    Stream B is shifted back by ``offset_ps``; a candidate pair is accepted
    unless the next tag of either stream sits strictly closer to its
    partner.  When neither stream has two tags closer than the window the
    match is unique and is found with a vectorized search instead of the
    two-pointer walk (same result).
    """
    ta, tb = _as_times(a), _as_times(b)
    _check_sorted(ta, "A")
    _check_sorted(tb, "B")
    if window_ps < 0:
        raise ValueError("window must be non-negative")
    off = int(offset_ps)
    half = window_ps / 2.0
    if ta.size and tb.size and _min_spacing(ta) > window_ps and _min_spacing(tb) > window_ps:
        bs = tb - off
        j = np.searchsorted(bs, ta - half, side="left")
        ok = j < bs.size
        jj = np.where(ok, j, 0)
        ok &= np.abs(bs[jj] - ta) <= half
        ia = np.nonzero(ok)[0]
        ib = jj[ok]
    else:
        ia_l, ib_l = _greedy_pairs(ta.tolist(), tb.tolist(), off, half)
        ia = np.asarray(ia_l, dtype=np.int64)
        ib = np.asarray(ib_l, dtype=np.int64)
    ia = ia.astype(np.int64)
    ib = ib.astype(np.int64)

    accidentals = 0.0
    if ta.size and tb.size:
        start = max(ta[0], tb[0] - off)
        end = min(ta[-1], tb[-1] - off)
        span = float(end - start)
        if span > 0:
            na = np.count_nonzero((ta >= start) & (ta <= end))
            nb = np.count_nonzero((tb - off >= start) & (tb - off <= end))
            accidentals = na * nb * window_ps / span
    return CoincidenceReport(ia, ib, ta[ia], tb[ib], float(window_ps), off,
                             int(ta.size), int(tb.size), accidentals)


def find_offset(a, b, search_range_ps: int, bin_ps: int) -> int:
    """Delay of B relative to A from the cross-correlation histogram peak.

    Raises :class:`NoPeak` when the largest bin does not clear the mean of
    the off-peak bins by five standard deviations.
    """
    ta, tb = _as_times(a), _as_times(b)
    _check_sorted(ta, "A")
    _check_sorted(tb, "B")
    if bin_ps <= 0 or search_range_ps < 0:
        raise ValueError("bin must be positive and range non-negative")
    lo = np.searchsorted(tb, ta - search_range_ps, side="left")
    hi = np.searchsorted(tb, ta + search_range_ps, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        raise NoPeak("no tag pairs within the search range")
    owner = np.repeat(np.arange(ta.size), counts)
    starts = np.cumsum(counts) - counts
    j = lo[owner] + (np.arange(total) - starts[owner])
    diffs = tb[j] - ta[owner]

    k_max = int(math.ceil(search_range_ps / bin_ps))
    idx = np.floor(diffs / bin_ps + 0.5).astype(np.int64)
    hist = np.bincount(idx + k_max, minlength=2 * k_max + 1)
    top = hist.max()
    candidates = np.nonzero(hist == top)[0] - k_max
    best = int(min(candidates, key=lambda k: (abs(k), k)))

    off_peak = np.delete(hist, [k + k_max for k in (best - 1, best, best + 1)
                                if 0 <= k + k_max < hist.size])
    if off_peak.size == 0:
        raise NoPeak("search range too small to judge the peak")
    threshold = off_peak.mean() + 5.0 * off_peak.std()
    if top <= threshold:
        raise NoPeak(f"histogram peak {top} does not exceed off-peak mean + 5 sd ({threshold:.1f})")
    return best * bin_ps


# --- two-way time transfer ------------------------------------------------

Exchange = tuple[float, float, float, float]


def exchange_offset(t1: float, t2: float, t3: float, t4: float) -> float:
    """Clock offset from one symmetric two-way exchange."""
    return ((t2 - t1) - (t4 - t3)) / 2.0


def estimate_clock(exchanges: Sequence[Exchange]) -> tuple[float, float]:
    """Offset (ps, at master time 0) and drift (ppm) from two-way exchanges.

    ``t1``/``t4`` are master send/receive stamps, ``t2``/``t3`` the remote
    receive/send stamps.  Assuming equal delays in both directions each
    exchange measures ``offset + drift * tm`` with ``tm = (t1 + t4) / 2``;
    a least-squares line through those points gives both parameters.
    """
    if len(exchanges) < 2:
        raise InsufficientExchanges("need at least two exchanges")
    ex = np.asarray(exchanges, dtype=float)
    t1, t2, t3, t4 = ex.T
    y = ((t2 - t1) - (t4 - t3)) / 2.0
    x = (t1 + t4) / 2.0
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx) if sxx > 0 else 0.0
    intercept = float(ym - slope * xm)
    return intercept, slope * 1e6


def two_way_exchanges(remote: ClockModel, delay_ps: float, count: int, *,
                      interval_ps: int = PPS_PERIOD_PS, hold_ps: float = 1_000_000.0,
                      jitter_ps: float = 0.0, rng: np.random.Generator | None = None,
                      quantize: bool = True) -> list[Exchange]:
    """Synthetic PPS-paced exchanges between a master and a remote clock."""
    out = []
    for k in range(count):
        t1 = float(k * interval_ps)
        j1 = j2 = 0.0
        if jitter_ps and rng is not None:
            j1, j2 = rng.normal(0.0, jitter_ps, size=2)
        t2 = float(remote.to_local(t1 + delay_ps + j1))
        t3 = t2 + hold_ps
        t4 = float(remote.to_true(t3)) + delay_ps + j2
        row = (t1, t2, t3, t4)
        if quantize:
            row = tuple(float(round(v)) for v in row)
        out.append(row)
    return out


# --- g2(0) ----------------------------------------------------------------

def estimate_g2(tags_a, tags_b, n_slots: int, window_ps: float, offset_ps: int = 0) -> float:
    """Hanbury Brown-Twiss estimate of g2(0) for a pulsed source.

    ``g2(0) = C * N / (S_A * S_B)`` with ``C`` the zero-delay coincidences,
    ``N`` the number of trigger slots and ``S_A``, ``S_B`` the singles of
    the two detectors behind the 50/50 splitter.
    """
    ta, tb = _as_times(tags_a), _as_times(tags_b)
    if ta.size < 1000 or tb.size < 1000:
        raise InsufficientCounts(f"singles {ta.size}/{tb.size}; need at least 1000 each")
    rep = match_coincidences(ta, tb, window_ps, offset_ps)
    return len(rep) * n_slots / (ta.size * tb.size)


def hbt_split(photon_counts: np.ndarray, det: DetectorParams, rng: np.random.Generator, *,
              period_ps: int, clock: ClockModel = IDEAL_CLOCK,
              gate_ps: float | None = 1000.0) -> tuple[TagStream, TagStream]:
    """Route each slot's photons through a 50/50 splitter to two detectors."""
    counts = np.asarray(photon_counts, dtype=np.int64)
    to_a = rng.binomial(counts, 0.5)
    to_b = counts - to_a
    arrival = np.arange(counts.size, dtype=np.int64) * int(period_ps)
    a = detect(arrival, to_a, det, clock, rng, channel=0, tagger="hbt", gate_ps=gate_ps)
    b = detect(arrival, to_b, det, clock, rng, channel=1, tagger="hbt", gate_ps=gate_ps)
    return a, b
