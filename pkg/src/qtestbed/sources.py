"""Per-slot photon emission models.

Three sources are modelled:

* weak coherent pulses (Poissonian photon number),
* a triggered solid-state single-photon emitter (hBN-style defect),
* a broadband SPDC pair source split over a symmetric WDM grid.

Single-photon emitter statistics
--------------------------------
The emitter is truncated at two photons per trigger.  With one-photon
probability ``p1`` and measured ``g2(0)``, the two-photon probability is
taken from ``g2(0) = <n(n-1)> / <n>^2 = 2 P(2) / <n>^2``.  Approximating
``<n> ~ p1`` (valid because ``P(2) << p1``) gives::

    P(2) = g2(0) * p1**2 / 2,    P(0) = 1 - p1 - P(2)

The exact ``g2(0)`` of this distribution is ``g2 / (1 + g2 * p1)**2``,
which is slightly below the configured value (0.086 for the defaults); the
difference is the price of the closed-form parameterization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParams
from .photonics import HBN_ZPL, JonesState, SpectralProfile, WdmChannel, WdmGrid

BELL_STATES = ("phi+", "phi-", "psi+", "psi-")


@dataclass(frozen=True)
class EmitterParams:
    """Triggered single-photon emitter.

    Defaults describe the room-temperature hBN defect: 575 nm zero-phonon
    line, a linewidth of tens of nm, ``g2(0)`` at its 0.1 bound and a
    3.83 ns excited-state lifetime.  ``brightness_p1`` is a design default.
    """

    zpl_nm: float = float(HBN_ZPL)
    fwhm_nm: float = 20.0
    g2_zero: float = 0.1
    lifetime_ns: float = 3.83
    brightness_p1: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.g2_zero < 1.0:
            raise InvalidParams("g2_zero must lie in [0, 1)")
        if not 0.0 < self.brightness_p1 <= 1.0:
            raise InvalidParams("brightness_p1 must lie in (0, 1]")
        if not self.lifetime_ns > 0 or not self.fwhm_nm > 0 or not self.zpl_nm > 0:
            raise InvalidParams("lifetime, linewidth and ZPL must be positive")
        if self.probabilities()[0] < 0.0:
            raise InvalidParams(
                f"P(0) would be negative for p1={self.brightness_p1}, g2={self.g2_zero}")

    def probabilities(self) -> tuple[float, float, float]:
        p1 = self.brightness_p1
        p2 = self.g2_zero * p1 * p1 / 2.0
        return 1.0 - p1 - p2, p1, p2

    @property
    def min_period_ns(self) -> float:
        """Shortest allowed trigger period: five excited-state lifetimes."""
        return 5.0 * self.lifetime_ns

    def check_period(self, period_ns: float) -> None:
        if period_ns < self.min_period_ns - 1e-12:
            raise InvalidParams(
                f"slot period {period_ns:g} ns is shorter than 5x lifetime "
                f"({self.min_period_ns:g} ns)")

    @property
    def spectrum(self) -> SpectralProfile:
        return SpectralProfile.gaussian(self.zpl_nm, self.fwhm_nm)


@dataclass(frozen=True)
class WcpParams:
    mean_photon_number: float = 0.5
    wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.mean_photon_number < 0:
            raise InvalidParams("mean photon number must be non-negative")

    @property
    def spectrum(self) -> SpectralProfile:
        # laser line; width only matters for WDM overlap
        return SpectralProfile.gaussian(self.wavelength_nm, 0.01)


@dataclass(frozen=True)
class SpdcParams:
    pair_probability: float = 0.01
    grid: WdmGrid = field(default_factory=WdmGrid)
    bell_state: str = "phi+"

    def __post_init__(self):
        if not 0.0 <= self.pair_probability < 1.0:
            raise InvalidParams("pair probability must lie in [0, 1)")
        if self.bell_state not in BELL_STATES:
            raise InvalidParams(f"bell_state must be one of {BELL_STATES}")
        if self.pair_probability >= 0.1:
            warnings.warn("SPDC pair probability >= 0.1: multi-pair emission dominates",
                          RuntimeWarning, stacklevel=2)

    @property
    def degeneracy_nm(self) -> float:
        return self.grid.degeneracy_nm


@dataclass(frozen=True)
class PulseRecord:
    """One emission slot leaving a source.

    Entangled photons carry ``polarization=None`` together with a shared
    ``pair_id`` and the ``bell_state`` label of the pair.
    """

    slot: int
    photon_count: int
    polarization: JonesState | None
    spectrum: SpectralProfile
    origin: str
    channel: WdmChannel | None = None
    pair_id: int | None = None
    bell_state: str | None = None

    def __post_init__(self):
        if self.photon_count < 0:
            raise ValueError("photon_count must be non-negative")
        if self.polarization is None and self.pair_id is None:
            raise ValueError("a pulse needs either a polarization or an entangled-pair id")


def sample_wcp(params: WcpParams, rng: np.random.Generator, size=None):
    """Poissonian photon number(s) of weak coherent pulses."""
    return rng.poisson(params.mean_photon_number, size=size)


def sample_spe(params: EmitterParams, rng: np.random.Generator, size=None):
    """Photon number(s) in {0, 1, 2} of the triggered emitter."""
    p0, p1, _ = params.probabilities()
    u = rng.random(size=size)
    counts = (u >= p0).astype(np.int64) + (u >= p0 + p1).astype(np.int64)
    if size is None:
        return int(counts)
    return counts


def sample_spdc_pair(params: SpdcParams, rng: np.random.Generator, slot: int = 0,
                     origin: str = "TUM-MI") -> list[tuple[PulseRecord, PulseRecord]]:
    """Pairs emitted in one slot: an empty list, one pair, or (rarely) two.

    The first pair occurs with probability ``p``; an independent second pair
    occurs with probability ``p**2`` overall.  Each pair picks a channel
    pair ``(+k, -k)`` uniformly over the grid.
    """
    p = params.pair_probability
    if p == 0.0 or rng.random() >= p:
        return []
    n = 2 if rng.random() < p else 1
    out = []
    for i in range(n):
        k = int(rng.integers(1, params.grid.n_pairs + 1))
        pid = slot * 2 + i
        records = []
        for idx in (k, -k):
            ch = params.grid.channel(idx)
            records.append(PulseRecord(slot, 1, None, ch.passband, origin, ch, pid, params.bell_state))
        out.append((records[0], records[1]))
    return out


def spdc_emissions(params: SpdcParams, n_slots: int, rng: np.random.Generator):
    """Vectorized SPDC emission over ``n_slots``.

    Returns ``(slots, k)``: the slot index and channel-pair index of every
    emitted pair, sorted by slot.  A multi-pair slot appears twice.
    """
    p = params.pair_probability
    if p == 0.0 or n_slots == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    expected = n_slots * p
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    gaps = rng.geometric(p, size=chunk)
    pos = np.cumsum(gaps) - 1
    while pos[-1] < n_slots:
        more = np.cumsum(rng.geometric(p, size=chunk)) + pos[-1]
        pos = np.concatenate([pos, more])
    first = pos[pos < n_slots]
    second = first[rng.random(first.size) < p]
    slots = np.sort(np.concatenate([first, second]), kind="stable")
    k = rng.integers(1, params.grid.n_pairs + 1, size=slots.size)
    return slots.astype(np.int64), k.astype(np.int64)


def converted_width_nm(width_nm: float, from_nm: float, to_nm: float) -> float:
    """Spectral width after conversion: the bandwidth in frequency is conserved."""
    return width_nm * (to_nm / from_nm) ** 2


@dataclass(frozen=True)
class FrequencyConverter:
    """Lossy wavelength translation stage (e.g. visible to telecom).

    ``noise_probability`` is the chance per slot of an uncorrelated noise
    photon reaching the receiver.
    """

    target_nm: float = 1550.0
    efficiency: float = 0.5
    noise_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise InvalidParams("conversion efficiency must lie in [0, 1]")
        if not 0.0 <= self.noise_probability <= 1.0:
            raise InvalidParams("noise probability must lie in [0, 1]")
        if not self.target_nm > 0:
            raise InvalidParams("target wavelength must be positive")

    def convert(self, pulse: PulseRecord, rng: np.random.Generator) -> PulseRecord | None:
        survivors = int(rng.binomial(pulse.photon_count, self.efficiency))
        if survivors == 0:
            return None
        spec = pulse.spectrum
        width = converted_width_nm(spec.width_nm, spec.center_nm, self.target_nm)
        return replace(pulse, photon_count=survivors,
                       spectrum=SpectralProfile(spec.shape, self.target_nm, width))

    def convert_counts(self, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.binomial(counts, self.efficiency)


def frequency_convert(pulse: PulseRecord, target_nm: float, efficiency: float,
                      noise_rate: float, rng: np.random.Generator) -> PulseRecord | None:
    """Translate ``pulse`` to ``target_nm``; polarization is left untouched."""
    return FrequencyConverter(target_nm, efficiency, noise_rate).convert(pulse, rng)
