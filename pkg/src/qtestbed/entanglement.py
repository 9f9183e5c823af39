"""Entanglement distribution over the WDM grid.

Joint outcome model
-------------------
A two-photon polarization state is a 4-vector over ``HH, HV, VH, VV``.
A linear analyzer at angle ``t`` reports +1 for ``(cos t, sin t)`` and -1
for ``(-sin t, cos t)``.  Local unitaries on either photon are applied to
the state before projection, and an imperfect source of visibility ``v``
is the mixture ``v |psi><psi| + (1 - v) I/4``.  For ``phi+`` this gives
``P(same) = cos^2(ta - tb)`` and ``E = cos 2(ta - tb)``, so the default
settings (0, 45 / 22.5, 67.5 degrees) reach ``S = 2 sqrt 2``.

Swap model
----------
``swap_at_bsm`` is a bookkeeping model, not a two-photon interference
simulation: a linear-optics Bell-state measurement succeeds with
probability 1/2 and the outer pair inherits the product of the two link
visibilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GridExhausted, LowStatistics, PreconditionError
from .network import RoadmConfig, reconfigure, transmittance
from .photonics import JonesState, PolarizationUnitary, WdmChannel, WdmGrid
from .sources import SpdcParams
from .timing import (ClockModel, DetectorParams, IDEAL_CLOCK, TagStream, dead_time_mask,
                     find_offset, match_coincidences)

_S2 = 1.0 / math.sqrt(2.0)
BELL_VECTORS = {
    "phi+": np.array([_S2, 0, 0, _S2], dtype=complex),
    "phi-": np.array([_S2, 0, 0, -_S2], dtype=complex),
    "psi+": np.array([0, _S2, _S2, 0], dtype=complex),
    "psi-": np.array([0, _S2, -_S2, 0], dtype=complex),
}
MIN_COINCIDENCES = 500


def product_state(a: JonesState, b: JonesState) -> np.ndarray:
    return np.kron(a.vector, b.vector)


def _state_vector(state) -> np.ndarray:
    if isinstance(state, str):
        try:
            return BELL_VECTORS[state]
        except KeyError:
            raise ValueError(f"unknown Bell state {state!r}") from None
    if isinstance(state, tuple) and len(state) == 2:
        return product_state(*state)
    vec = np.asarray(state, dtype=complex).reshape(4)
    n = np.linalg.norm(vec)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("two-photon state must be normalized")
    return vec


# --- leases -----------------------------------------------------------------

@dataclass(frozen=True)
class ChannelPairLease:
    user_a: str
    user_b: str
    signal: WdmChannel
    idler: WdmChannel
    active: bool = True
    visibility: float = 1.0

    def __post_init__(self):
        if self.signal.index + self.idler.index != 0:
            raise ValueError("signal and idler must be a symmetric pair (+k, -k)")
        if self.user_a == self.user_b:
            raise ValueError("a lease needs two distinct users")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")

    @property
    def k(self) -> int:
        return abs(self.signal.index)

    @property
    def users(self) -> tuple[str, str]:
        return self.user_a, self.user_b


def lease_channel_pair(grid: WdmGrid, users: tuple[str, str],
                       active_leases, visibility: float = 1.0) -> ChannelPairLease:
    """Lease the lowest free ``|k|`` of ``grid`` to ``users``."""
    taken = {l.k for l in active_leases if l.active}
    for k in range(1, grid.n_pairs + 1):
        if k not in taken:
            a, b = users
            return ChannelPairLease(a, b, grid.channel(k), grid.channel(-k), True, visibility)
    raise GridExhausted(f"all {grid.n_pairs} channel pairs are leased")


class LeaseTable:
    """Active leases plus the hub ROADM state that routes them.

    Leasing ``k`` routes ``+k`` from the source port to ``user_a`` and
    ``-k`` to ``user_b``; releasing removes both entries.
    """

    def __init__(self, grid: WdmGrid, roadm: RoadmConfig | None = None, source_port: str = "SPDC"):
        self.grid = grid
        self.roadm = roadm if roadm is not None else RoadmConfig()
        self.source_port = source_port
        self._leases: list[ChannelPairLease] = []

    @property
    def active(self) -> list[ChannelPairLease]:
        return list(self._leases)

    def lease(self, user_a: str, user_b: str, visibility: float = 1.0) -> ChannelPairLease:
        lease = lease_channel_pair(self.grid, (user_a, user_b), self._leases, visibility)
        self.roadm = reconfigure(self.roadm, {(self.source_port, lease.signal.index): user_a,
                                              (self.source_port, lease.idler.index): user_b})
        self._leases.append(lease)
        self._check()
        return lease

    def release(self, lease: ChannelPairLease) -> None:
        if lease not in self._leases:
            raise KeyError("lease is not active")
        self._leases.remove(lease)
        self.roadm = reconfigure(self.roadm, {(self.source_port, lease.signal.index): None,
                                              (self.source_port, lease.idler.index): None})
        self._check()

    def _check(self) -> None:
        used = [l.signal.index for l in self._leases] + [l.idler.index for l in self._leases]
        assert len(used) == len(set(used)), "channel shared by two active leases"


# --- pair measurement -------------------------------------------------------

def _analyzer(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]], dtype=complex)  # rows: +1 then -1


def joint_probabilities(state, angle_a: float, angle_b: float,
                        unitary_a: PolarizationUnitary | None = None,
                        unitary_b: PolarizationUnitary | None = None,
                        visibility: float = 1.0) -> np.ndarray:
    """``[P(++), P(+-), P(-+), P(--)]`` for the given analyzers."""
    psi = _state_vector(state)
    ua = unitary_a.matrix if unitary_a is not None else np.eye(2)
    ub = unitary_b.matrix if unitary_b is not None else np.eye(2)
    psi = np.kron(ua, ub) @ psi
    amps = np.kron(_analyzer(angle_a).conj(), _analyzer(angle_b).conj()) @ psi
    p = np.abs(amps) ** 2
    p = visibility * p + (1.0 - visibility) / 4.0
    return p / p.sum()


_OUTCOMES = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.int64)


def measure_pair(state, angle_a: float, angle_b: float, rng: np.random.Generator,
                 size: int | None = None, *, unitary_a: PolarizationUnitary | None = None,
                 unitary_b: PolarizationUnitary | None = None, visibility: float = 1.0):
    """Sample ``(outcome_a, outcome_b)`` in {+1, -1} from the exact joint distribution."""
    p = joint_probabilities(state, angle_a, angle_b, unitary_a, unitary_b, visibility)
    idx = rng.choice(4, size=size, p=p)
    out = _OUTCOMES[idx]
    if size is None:
        return int(out[0]), int(out[1])
    return out[:, 0], out[:, 1]


# --- CHSH -------------------------------------------------------------------

@dataclass(frozen=True)
class ChshSettings:
    a: float = 0.0
    a_prime: float = math.pi / 4
    b: float = math.pi / 8
    b_prime: float = 3 * math.pi / 8

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            v = getattr(self, name)
            if not 0.0 <= v < math.pi:
                raise ValueError(f"angle {name}={v} outside [0, pi)")

    @classmethod
    def degrees(cls, a, a_prime, b, b_prime) -> "ChshSettings":
        return cls(*(math.radians(x) for x in (a, a_prime, b, b_prime)))

    def pairs(self) -> list[tuple[float, float]]:
        """Analyzer pairs in the order (a,b), (a,b'), (a',b), (a',b')."""
        return [(self.a, self.b), (self.a, self.b_prime),
                (self.a_prime, self.b), (self.a_prime, self.b_prime)]


@dataclass
class ChshReport:
    e_ab: float
    e_ab_prime: float
    e_a_prime_b: float
    e_a_prime_b_prime: float
    s_value: float
    s_sigma: float
    coincidences_per_setting: list[int]
    accidentals_subtracted: bool = False
    low_statistics: bool = False

    def __post_init__(self):
        if abs(self.s_value) > 4.0 + 1e-12:
            raise ValueError("|S| cannot exceed 4")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def correlation(counts: np.ndarray) -> float:
    """``E = (N++ + N-- - N+- - N-+) / N`` from counts ordered ``++, +-, -+, --``."""
    n = float(counts.sum())
    if n == 0:
        return 0.0
    return float((counts[0] + counts[3] - counts[1] - counts[2]) / n)


def _report(counts: list[np.ndarray], subtracted: bool = False,
            allow_low: bool = False) -> ChshReport:
    totals = [int(round(float(c.sum()))) for c in counts]
    low = any(t < MIN_COINCIDENCES for t in totals)
    if low and not allow_low:
        raise LowStatistics(f"coincidences per setting {totals}; need >= {MIN_COINCIDENCES}")
    e = [correlation(c) for c in counts]
    s = e[0] - e[1] + e[2] + e[3]
    var = sum((1.0 - x * x) / t for x, t in zip(e, totals) if t > 0)
    return ChshReport(e[0], e[1], e[2], e[3], s, math.sqrt(var), totals, subtracted, low)


def chsh_sampled(settings: ChshSettings, pairs_per_setting: int, rng: np.random.Generator,
                 state="phi+", *, visibility: float = 1.0,
                 unitary_a: PolarizationUnitary | None = None,
                 unitary_b: PolarizationUnitary | None = None) -> ChshReport:
    """CHSH from the pair sampler alone: every pair is a coincidence."""
    counts = []
    for ta, tb in settings.pairs():
        oa, ob = measure_pair(state, ta, tb, rng, pairs_per_setting, unitary_a=unitary_a,
                              unitary_b=unitary_b, visibility=visibility)
        idx = (1 - oa) + (1 - ob) // 2
        counts.append(np.bincount(idx, minlength=4).astype(float))
    return _report(counts)


@dataclass(frozen=True)
class ChshStack:
    """Physical chain between the SPDC source and the two PAMs.

    ``unitary_a``/``unitary_b`` are the net polarization transforms of each
    arm (drift followed by any correction).  With ``multi_pair`` a slot
    holding a pair in the leased channel carries a second one with
    probability ``p / n_pairs``.  The B-side delay is found with
    :func:`find_offset` unless ``calibrate_offset`` is off, in which case
    the true delay difference is used.
    """

    source: SpdcParams = field(default_factory=SpdcParams)
    state: object = None
    loss_a_db: float = 0.0
    loss_b_db: float = 0.0
    detector_a: DetectorParams = DetectorParams(1.0, 0.0, 0.0, 42.0)
    detector_b: DetectorParams = DetectorParams(1.0, 0.0, 0.0, 42.0)
    unitary_a: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)
    unitary_b: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)
    clock_b: ClockModel = IDEAL_CLOCK
    delay_a_ps: float = 0.0
    delay_b_ps: float = 0.0
    period_ps: int = 10_000
    window_ps: float = 500.0
    multi_pair: bool = True
    visibility: float = 1.0
    calibrate_offset: bool = True
    search_range_ps: int = 20_000_000
    bin_ps: int = 100
    subtract_accidentals: bool = False
    allow_low_statistics: bool = False


def _side_tags(slots: np.ndarray, outcome: np.ndarray, det: DetectorParams, loss_db: float,
               delay_ps: float, clock: ClockModel, period_ps: int, t0_ps: float, span_ps: float,
               rng: np.random.Generator, tagger: str) -> TagStream:
    """Clicks of the two (+1 / -1) detectors behind one analyzer."""
    arrive = rng.random(slots.size) < transmittance(loss_db) * det.efficiency
    ch = (outcome[arrive] < 0).astype(np.int64)
    key = np.unique(slots[arrive] * 2 + ch)  # threshold detectors: one click per slot/port
    t = (key // 2).astype(float) * period_ps + delay_ps
    ch = key % 2
    if det.dark_rate_hz > 0:
        n_dark = rng.poisson(det.dark_rate_hz * 1e-12 * span_ps, size=2)
        t = np.concatenate([t, t0_ps + rng.random(int(n_dark.sum())) * span_ps + delay_ps])
        ch = np.concatenate([ch, np.repeat([0, 1], n_dark)])
    order = np.argsort(t, kind="stable")
    t, ch = t[order], ch[order]
    keep = np.ones(t.size, dtype=bool)
    for c in (0, 1):
        idx = np.flatnonzero(ch == c)
        keep[idx] = dead_time_mask(t[idx], det.dead_time_ps)
    t, ch = t[keep], ch[keep]
    if det.jitter_sigma_ps > 0:
        t = t + rng.normal(0.0, det.jitter_sigma_ps, size=t.size)
    tags = np.floor(clock.to_local(t)).astype(np.int64)
    order = np.argsort(tags, kind="stable")
    return TagStream(tags[order], ch[order], tagger)


def _coincidence_counts(a: TagStream, b: TagStream, window: float, offset: int) -> np.ndarray:
    rep = match_coincidences(a, b, window, offset)
    idx = a.channel[rep.index_a] * 2 + b.channel[rep.index_b]
    return np.bincount(idx, minlength=4).astype(float)


def _emission_slots(p_ch: float, rng: np.random.Generator, pairs: int | None,
                    slots: int | None) -> np.ndarray:
    if pairs is not None:
        return np.cumsum(rng.geometric(p_ch, size=pairs)) - 1
    expected = slots * p_ch
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    pos = np.cumsum(rng.geometric(p_ch, size=chunk)) - 1
    while pos[-1] < slots:
        pos = np.concatenate([pos, np.cumsum(rng.geometric(p_ch, size=chunk)) + pos[-1]])
    return pos[pos < slots]


def chsh(settings: ChshSettings, pairs_per_setting: int | None, stack: ChshStack,
         rng: np.random.Generator, lease: ChannelPairLease | None = None, *,
         slots_per_setting: int | None = None, first_slot: int = 0,
         tag_sink: list | None = None) -> ChshReport:
    """CHSH from time-tagged clicks through the full channel stack.

    For each setting ``pairs_per_setting`` pairs are emitted into the
    leased channel pair; the two PAMs tag their clicks, B's delay is
    calibrated from the tags and correlations come from matched
    coincidences only.  With ``slots_per_setting`` instead, each setting
    runs for a fixed number of slots (settings back to back from
    ``first_slot``) and the pair count follows from the emission rate.
    ``tag_sink`` collects ``(tags_a, tags_b)`` per setting.  Accidentals dilute ``E`` unless
    ``stack.subtract_accidentals`` removes the counts seen at a
    non-coincident delay.
    """
    if lease is not None and not lease.active:
        raise PreconditionError("lease is not active")
    state = stack.state if stack.state is not None else stack.source.bell_state
    visibility = stack.visibility * (lease.visibility if lease is not None else 1.0)
    p = stack.source.pair_probability
    p_ch = p / stack.source.grid.n_pairs
    if not 0.0 < p_ch < 1.0:
        raise ValueError("pair probability must be positive")

    if (pairs_per_setting is None) == (slots_per_setting is None):
        raise ValueError("give exactly one of pairs_per_setting and slots_per_setting")

    counts = []
    for i, (ta, tb) in enumerate(settings.pairs()):
        slots = _emission_slots(p_ch, rng, pairs_per_setting, slots_per_setting)
        if stack.multi_pair:
            slots = np.sort(np.concatenate([slots, slots[rng.random(slots.size) < p_ch]]))
        oa, ob = measure_pair(state, ta, tb, rng, slots.size, unitary_a=stack.unitary_a,
                              unitary_b=stack.unitary_b, visibility=visibility)
        base = first_slot + i * (slots_per_setting or 0)
        if slots_per_setting is not None:
            span = float(slots_per_setting) * stack.period_ps
        else:
            span = float(slots[-1] + 1) * stack.period_ps if slots.size else 0.0
        slots = slots + base
        t0 = base * float(stack.period_ps)
        tags_a = _side_tags(slots, oa, stack.detector_a, stack.loss_a_db, stack.delay_a_ps,
                            IDEAL_CLOCK, stack.period_ps, t0, span, rng, "A")
        tags_b = _side_tags(slots, ob, stack.detector_b, stack.loss_b_db, stack.delay_b_ps,
                            stack.clock_b, stack.period_ps, t0, span, rng, "B")
        if tag_sink is not None:
            tag_sink.append((tags_a, tags_b))
        if stack.calibrate_offset:
            offset = find_offset(tags_a, tags_b, stack.search_range_ps, stack.bin_ps)
        else:
            offset = int(round(stack.delay_b_ps - stack.delay_a_ps))
        c = _coincidence_counts(tags_a, tags_b, stack.window_ps, offset)
        if stack.subtract_accidentals:
            shift = offset + 7 * stack.period_ps
            c = np.maximum(0.0, c - _coincidence_counts(tags_a, tags_b, stack.window_ps, shift))
        counts.append(c)
    return _report(counts, stack.subtract_accidentals, stack.allow_low_statistics)


# --- swapping ---------------------------------------------------------------

@dataclass(frozen=True)
class SwappedLease:
    """Entangled pair between two outer nodes after a swap at ``via``."""

    user_a: str
    user_b: str
    via: str
    visibility: float
    legs: tuple[ChannelPairLease, ChannelPairLease]


def swap_at_bsm(lease_ab: ChannelPairLease, lease_bc: ChannelPairLease,
                rng: np.random.Generator) -> SwappedLease | None:
    """Entanglement swap at the node both leases share; ``None`` on BSM failure."""
    if not (lease_ab.active and lease_bc.active):
        raise PreconditionError("both leases must be active")
    shared = set(lease_ab.users) & set(lease_bc.users)
    if len(shared) != 1:
        raise PreconditionError("leases must share exactly one node")
    via = shared.pop()
    outer_a = next(u for u in lease_ab.users if u != via)
    outer_c = next(u for u in lease_bc.users if u != via)
    if rng.random() >= 0.5:
        return None
    return SwappedLease(outer_a, outer_c, via, lease_ab.visibility * lease_bc.visibility,
                        (lease_ab, lease_bc))
