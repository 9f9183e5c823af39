"""Prepare-and-measure QKD: BB84, B92 and SARG04.

State conventions
-----------------
``(basis, bit)`` selects a BB84 state: ``(0, 0) = H``, ``(0, 1) = V``,
``(1, 0) = D``, ``(1, 1) = A``.

* BB84 - ``prepare(BB84, bit, basis)``.  Sifting keeps rounds where Bob's
  basis equals Alice's.
* B92 - bit 0 is sent as ``H``, bit 1 as ``D``.  Bob measures in a random
  basis; a ``V`` outcome rules out ``H`` (so bit 1) and an ``A`` outcome
  rules out ``D`` (so bit 0).  Every other outcome is inconclusive.
* SARG04 - the bit is the basis (0 rectilinear, 1 diagonal) and the second
  index is the sign within it, so ``prepare(SARG04, 0, 0) = H``.  Alice then
  announces a pair of non-orthogonal states made of her own state and a
  random-sign state of the other basis.  Bob's outcome is conclusive when
  it is orthogonal to the pair member in his basis; he then knows the
  state was the other member, whose basis is the bit.

Secure key fraction
-------------------
Asymptotic BB84 rate with one-way post-processing (Shor-Preskill),
``r = 1 - 2 h2(Q)``, clamped at zero.  No finite-key or error-correction
inefficiency terms are included.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import (InsufficientKey, InvalidIndex, MissingAnnouncement, QOutOfRange,
                     WavelengthOutOfRange)
from .network import FiberSpan, UnitLosses, loss_budget, transmittance
from .photonics import A, D, H, JonesState, PolarizationUnitary, V
from .sources import EmitterParams, FrequencyConverter, WcpParams, sample_spe, sample_wcp
from .rng import Streams
from .timing import ClockModel, DetectorParams, TagStream, dead_time_mask


class ProtocolKind(str, Enum):
    BB84 = "BB84"
    B92 = "B92"
    SARG04 = "SARG04"


_TABLE = {(0, 0): H, (0, 1): V, (1, 0): D, (1, 1): A}
_VEC = np.array([[_TABLE[(b, x)].vector for x in (0, 1)] for b in (0, 1)])  # [basis, bit, 2]


def prepare(kind: ProtocolKind | str, bit: int, index: int = 0) -> JonesState:
    """Jones state Alice sends.  ``index`` is the basis (BB84), the sign (SARG04) or unused (B92)."""
    kind = ProtocolKind(kind)
    if bit not in (0, 1):
        raise InvalidIndex(f"bit must be 0 or 1, got {bit!r}")
    if kind is ProtocolKind.B92:
        return H if bit == 0 else D
    if index not in (0, 1):
        raise InvalidIndex(f"index must be 0 or 1, got {index!r}")
    if kind is ProtocolKind.BB84:
        return _TABLE[(index, bit)]
    return _TABLE[(bit, index)]


def prepare_vectors(kind: ProtocolKind, bits: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Vectorized :func:`prepare`; returns an ``(N, 2)`` array of Jones vectors."""
    kind = ProtocolKind(kind)
    if kind is ProtocolKind.B92:
        return _VEC[bits, 0]
    if kind is ProtocolKind.BB84:
        return _VEC[index, bits]
    return _VEC[bits, index]


@dataclass(frozen=True)
class PmRound:
    alice_bit: int
    alice_index: int
    bob_basis: int
    bob_outcome: int | None
    announcement: int | None = None


@dataclass
class PmRounds:
    """Column store of prepare-and-measure rounds.

    ``bob_outcome`` is -1 where Bob saw no click; ``announcement`` is -1
    where nothing was announced (only SARG04 announces).
    """

    alice_bit: np.ndarray
    alice_index: np.ndarray
    bob_basis: np.ndarray
    bob_outcome: np.ndarray
    announcement: np.ndarray
    slot: np.ndarray = None

    def __post_init__(self):
        n = len(self.alice_bit)
        if self.slot is None:
            self.slot = np.arange(n, dtype=np.int64)
        for name in ("alice_bit", "alice_index", "bob_basis", "bob_outcome", "announcement", "slot"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (n,):
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)

    @classmethod
    def from_rounds(cls, rounds) -> "PmRounds":
        rounds = list(rounds)

        def col(f):
            return np.array([-1 if getattr(r, f) is None else getattr(r, f) for r in rounds],
                            dtype=np.int64)

        return cls(col("alice_bit"), col("alice_index"), col("bob_basis"), col("bob_outcome"),
                   col("announcement"))

    def __len__(self) -> int:
        return int(self.alice_bit.size)

    def __getitem__(self, i: int) -> PmRound:
        out = int(self.bob_outcome[i])
        ann = int(self.announcement[i])
        return PmRound(int(self.alice_bit[i]), int(self.alice_index[i]), int(self.bob_basis[i]),
                       None if out < 0 else out, None if ann < 0 else ann)

    def subset(self, mask) -> "PmRounds":
        return PmRounds(self.alice_bit[mask], self.alice_index[mask], self.bob_basis[mask],
                        self.bob_outcome[mask], self.announcement[mask], self.slot[mask])

    @staticmethod
    def concat(parts: list["PmRounds"]) -> "PmRounds":
        cols = ("alice_bit", "alice_index", "bob_basis", "bob_outcome", "announcement", "slot")
        if not parts:
            z = np.zeros(0, np.int64)
            return PmRounds(z, z, z, z, z, z)
        return PmRounds(*[np.concatenate([getattr(p, c) for p in parts]) for c in cols])


@dataclass
class SiftedKey:
    alice: np.ndarray
    bob: np.ndarray
    slot: np.ndarray
    n_rounds: int
    n_detected: int

    def __len__(self) -> int:
        return int(self.alice.size)

    @property
    def sift_fraction(self) -> float:
        return len(self) / self.n_detected if self.n_detected else 0.0


def sift(kind: ProtocolKind | str, rounds: PmRounds) -> SiftedKey:
    """Public-discussion sifting.  Pure: depends on ``rounds`` only."""
    kind = ProtocolKind(kind)
    clicked = rounds.bob_outcome >= 0
    if kind is ProtocolKind.BB84:
        if np.any(rounds.alice_index[clicked] < 0):
            raise MissingAnnouncement("BB84 round without Alice's basis announcement")
        keep = clicked & (rounds.bob_basis == rounds.alice_index)
        bob_bits = rounds.bob_outcome
    elif kind is ProtocolKind.B92:
        keep = clicked & (rounds.bob_outcome == 1)
        bob_bits = 1 - rounds.bob_basis
    else:
        if np.any(rounds.announcement[clicked] < 0):
            raise MissingAnnouncement("SARG04 round without Alice's pair announcement")
        z_sign = np.where(rounds.alice_bit == 0, rounds.alice_index, rounds.announcement)
        x_sign = np.where(rounds.alice_bit == 1, rounds.alice_index, rounds.announcement)
        member = np.where(rounds.bob_basis == 0, z_sign, x_sign)
        keep = clicked & (rounds.bob_outcome != member)
        bob_bits = 1 - rounds.bob_basis
    return SiftedKey(rounds.alice_bit[keep].copy(), bob_bits[keep].copy(), rounds.slot[keep].copy(),
                     len(rounds), int(np.count_nonzero(clicked)))


def error_rate(alice: np.ndarray, bob: np.ndarray) -> float:
    """Fraction of positions where the two bit strings differ."""
    alice, bob = np.asarray(alice), np.asarray(bob)
    if alice.size == 0:
        return 0.0
    return float(np.count_nonzero(alice != bob)) / alice.size


def estimate_qber(alice: np.ndarray, bob: np.ndarray, sample_fraction: float,
                  rng: np.random.Generator) -> tuple[float, np.ndarray, np.ndarray]:
    """Disclose a random sample and return ``(qber, alice_rest, bob_rest)``.

    The disclosed positions are removed from the returned key material.
    """
    alice, bob = np.asarray(alice), np.asarray(bob)
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError("sample_fraction must lie in (0, 1]")
    n = alice.size
    if n == 0 or n * sample_fraction < 1.0 - 1e-9:
        raise InsufficientKey(f"sifted length {n} is below 1/sample_fraction")
    m = max(1, min(n, int(round(n * sample_fraction))))
    chosen = rng.choice(n, size=m, replace=False) if m < n else np.arange(n)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return error_rate(alice[mask], bob[mask]), alice[~mask], bob[~mask]


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def secure_fraction(qber: float) -> float:
    """Asymptotic secure key per sifted bit, ``max(0, 1 - 2 h2(Q))``."""
    if not 0.0 <= qber <= 0.5:
        raise QOutOfRange(f"QBER {qber!r} outside [0, 0.5]")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


def intercept_resend(vectors: np.ndarray, rng: np.random.Generator,
                     probability: float = 1.0) -> np.ndarray:
    """Eve measures a fraction of the pulses in a random BB84 basis and resends her result."""
    vectors = np.asarray(vectors, dtype=complex)
    n = vectors.shape[0]
    hit = rng.random(n) < probability
    basis = rng.integers(0, 2, size=n)
    p0 = np.abs(np.einsum("ij,ij->i", _VEC[basis, 0].conj(), vectors)) ** 2
    outcome = (rng.random(n) >= p0).astype(np.int64)
    resent = _VEC[basis, outcome]
    return np.where(hit[:, None], resent, vectors)


# --- end-to-end experiment -------------------------------------------------

@dataclass(frozen=True)
class Adversary:
    kind: str = "intercept_resend"
    probability: float = 1.0

    def __post_init__(self):
        if self.kind != "intercept_resend":
            raise ValueError(f"unknown adversary {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("interception probability must lie in [0, 1]")


@dataclass(frozen=True)
class PmChannel:
    """Everything between Alice's source and Bob's PAM.

    ``loss_db`` overrides the path budget when set.  ``converter`` is used
    when the source wavelength cannot travel on the path fibers; a default
    converter to 1550 nm is inserted automatically in that case.
    """

    path: tuple = ()
    unit_losses: UnitLosses = UnitLosses()
    loss_db: float | None = None
    drift: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)
    correction: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)
    converter: FrequencyConverter | None = None
    background_rate_hz: float = 0.0
    delay_ps: float | None = None

    def resolve(self, source_nm: float) -> tuple[float, FrequencyConverter | None]:
        """Total loss in dB and the converter actually used.

        Conversion depends only on whether the path fibers carry the source
        wavelength; ``loss_db`` then replaces the computed budget.
        """
        path = list(self.path)
        conv = None
        loss = 0.0
        if path:
            try:
                loss = loss_budget(path, source_nm, self.unit_losses)
            except WavelengthOutOfRange:
                conv = self.converter or FrequencyConverter()
                loss = loss_budget(path, conv.target_nm, self.unit_losses)
        if self.loss_db is not None:
            loss = float(self.loss_db)
        return loss, conv

    @property
    def propagation_delay_ps(self) -> float:
        if self.delay_ps is not None:
            return float(self.delay_ps)
        return sum(p.delay_ps for p in self.path if isinstance(p, FiberSpan))


def _source_nm(source) -> float:
    return source.zpl_nm if isinstance(source, EmitterParams) else source.wavelength_nm


def _sample_counts(source, n: int, rng) -> np.ndarray:
    if isinstance(source, EmitterParams):
        return sample_spe(source, rng, size=n)
    if isinstance(source, WcpParams):
        return sample_wcp(source, rng, size=n)
    raise TypeError(f"unsupported PM source {source!r}")


class _Rngs:
    """Named streams, or one shared generator when a plain Generator is given."""

    def __init__(self, rng):
        if isinstance(rng, Streams):
            self._get = rng.__getitem__
        elif isinstance(rng, np.random.Generator):
            self._get = lambda name: rng
        else:
            s = Streams(int(rng))
            self._get = s.__getitem__

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._get(name)


@dataclass
class PmSlotData:
    """Raw outcome of a block of PM slots."""

    rounds: PmRounds
    photons_sent: np.ndarray
    clicks: np.ndarray  # shape (n, 2): per-slot click of Bob's bit-0 / bit-1 detector
    loss_db: float
    converted: bool
    first_slot: int

    @property
    def n_slots(self) -> int:
        return len(self.rounds)

    @property
    def detection_fraction(self) -> float:
        return float(np.count_nonzero(self.rounds.bob_outcome >= 0)) / max(1, self.n_slots)

    def detector_counts(self) -> dict[str, int]:
        """Clicks per PAM detector, keyed ``<basis><bit>`` (``r0 r1 d0 d1``)."""
        out = {}
        for b, name in ((0, "r"), (1, "d")):
            in_basis = self.rounds.bob_basis == b
            for bit in (0, 1):
                out[f"{name}{bit}"] = int(np.count_nonzero(self.clicks[in_basis, bit]))
        return out

    def bob_tags(self, det: DetectorParams, clock: ClockModel, rng: np.random.Generator, *,
                 period_ps: int, delay_ps: float, tagger: str) -> TagStream:
        """Time tags of Bob's four detectors (channel = 2 * basis + bit)."""
        slot_idx, bit = np.nonzero(self.clicks)
        basis = self.rounds.bob_basis[slot_idx]
        channel = 2 * basis + bit
        t = ((self.first_slot + slot_idx) * float(period_ps) + delay_ps
             + rng.normal(0.0, det.jitter_sigma_ps, size=slot_idx.size))
        tags = np.floor(clock.to_local(t)).astype(np.int64)
        order = np.argsort(tags, kind="stable")
        return TagStream(tags[order], channel[order], tagger)


def simulate_pm_slots(kind: ProtocolKind | str, channel: PmChannel, source, det: DetectorParams,
                      n_slots: int, adversary: Adversary | None, rng, *, first_slot: int = 0,
                      period_ps: int = 20_000, gate_ps: float = 1000.0) -> PmSlotData:
    """Prepare, transmit and detect ``n_slots`` pulses; no post-processing."""
    kind = ProtocolKind(kind)
    rngs = _Rngs(rng)
    ra, rs, re, rc, rb = (rngs[n] for n in ("alice", "source", "eve", "channel", "bob"))

    bits = ra.integers(0, 2, size=n_slots)
    index = ra.integers(0, 2, size=n_slots)
    if kind is ProtocolKind.B92:
        index = np.zeros(n_slots, dtype=np.int64)
    announcement = (ra.integers(0, 2, size=n_slots) if kind is ProtocolKind.SARG04
                    else np.full(n_slots, -1, dtype=np.int64))
    counts = _sample_counts(source, n_slots, rs)
    vectors = prepare_vectors(kind, bits, index)

    if adversary is not None and adversary.probability > 0:
        vectors = intercept_resend(vectors, re, adversary.probability)
    link = (channel.correction @ channel.drift).matrix
    vectors = vectors @ link.T

    loss_db, conv = channel.resolve(_source_nm(source))
    arriving = counts
    noise_p = 0.0
    if conv is not None:
        arriving = conv.convert_counts(arriving, rc)
        noise_p = conv.noise_probability
    arriving = rc.binomial(arriving, transmittance(loss_db) * det.efficiency)

    bob_basis = rb.integers(0, 2, size=n_slots)
    basis0 = _VEC[bob_basis, 0]
    p0 = np.clip(np.abs(np.einsum("ij,ij->i", basis0.conj(), vectors)) ** 2, 0.0, 1.0)
    n0 = rb.binomial(arriving, p0)
    n1 = arriving - n0

    dark_p = -math.expm1(-(det.dark_rate_hz + channel.background_rate_hz) * gate_ps * 1e-12)
    dark_p = 1.0 - (1.0 - dark_p) * (1.0 - noise_p / 2.0)
    clicks = np.stack([n0 > 0, n1 > 0], axis=1)
    if dark_p > 0:
        clicks |= rb.random((n_slots, 2)) < dark_p
    if det.dead_time_ps >= period_ps:
        times = np.arange(n_slots, dtype=np.int64) * int(period_ps)
        for d in (0, 1):
            idx = np.flatnonzero(clicks[:, d])
            keep = dead_time_mask(times[idx], det.dead_time_ps)
            clicks[idx[~keep], d] = False

    outcome = np.full(n_slots, -1, dtype=np.int64)
    only0 = clicks[:, 0] & ~clicks[:, 1]
    only1 = clicks[:, 1] & ~clicks[:, 0]
    both = clicks[:, 0] & clicks[:, 1]
    outcome[only0] = 0
    outcome[only1] = 1
    # double clicks are squashed to a random bit
    outcome[both] = rb.integers(0, 2, size=int(np.count_nonzero(both)))

    slots = np.arange(first_slot, first_slot + n_slots, dtype=np.int64)
    rounds = PmRounds(bits, index, bob_basis, outcome, announcement, slots)
    return PmSlotData(rounds, counts, clicks, loss_db, conv is not None, first_slot)


@dataclass
class SiftedKeyReport:
    protocol: str
    n_slots: int
    raw_rounds: int
    sifted_length: int
    sift_fraction: float
    qber: float
    disclosed_bits: int
    final_key_bits: int
    secure_fraction: float
    detection_fraction: float
    secure_key_per_slot: float
    loss_db: float = 0.0
    frequency_converted: bool = False

    def __post_init__(self):
        if not 0 <= self.sifted_length <= self.raw_rounds:
            raise ValueError("sifted length must lie between 0 and raw_rounds")
        if not 0.0 <= self.qber <= 1.0:
            raise ValueError("QBER outside [0, 1]")
        self.secure_fraction = max(0.0, self.secure_fraction)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def build_report(kind: ProtocolKind | str, rounds: PmRounds, n_slots: int, sample_fraction: float,
                 rng: np.random.Generator, loss_db: float = 0.0,
                 converted: bool = False) -> SiftedKeyReport:
    """Sift, estimate QBER on a disclosed sample and derive the key rates."""
    kind = ProtocolKind(kind)
    key = sift(kind, rounds)
    detection = key.n_detected / n_slots if n_slots else 0.0
    try:
        qber, rest, _ = estimate_qber(key.alice, key.bob, sample_fraction, rng)
        disclosed = len(key) - rest.size
    except InsufficientKey:
        qber, disclosed = 0.5, len(key)
    sf = secure_fraction(min(qber, 0.5))
    return SiftedKeyReport(
        protocol=kind.value, n_slots=int(n_slots), raw_rounds=key.n_detected,
        sifted_length=len(key), sift_fraction=key.sift_fraction, qber=float(qber),
        disclosed_bits=int(disclosed), final_key_bits=int(len(key) - disclosed),
        secure_fraction=sf, detection_fraction=detection,
        secure_key_per_slot=key.sift_fraction * detection * sf,
        loss_db=float(loss_db), frequency_converted=bool(converted))


def run_pm_experiment(kind: ProtocolKind | str, channel: PmChannel, source, det: DetectorParams,
                      n_slots: int, adversary: Adversary | None, rng, *,
                      sample_fraction: float = 0.1, period_ps: int = 20_000,
                      gate_ps: float = 1000.0) -> SiftedKeyReport:
    """Prepare, drift/compensate, lose, detect, sift, estimate and rate one PM run.

    ``secure_key_per_slot = sift_fraction * detection_fraction * secure_fraction``.
    A key too short to sample is reported with QBER 0.5 (no secure key).
    """
    data = simulate_pm_slots(kind, channel, source, det, n_slots, adversary, rng,
                             period_ps=period_ps, gate_ps=gate_ps)
    return build_report(kind, data.rounds, n_slots, sample_fraction, _Rngs(rng)["qber"],
                        data.loss_db, data.converted)
