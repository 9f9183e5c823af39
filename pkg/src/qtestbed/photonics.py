"""Polarization algebra, spectral profiles and WDM channel math.

Conventions used everywhere in the package:

* Jones vectors are ``(amp_h, amp_v)``.  ``D = (H + V)/sqrt(2)`` and
  ``A = (H - V)/sqrt(2)``.
* A linear polarizer at angle ``theta`` transmits
  ``cos(theta) H + sin(theta) V``.
* Measurement bases are rectilinear ``{H, V}`` and diagonal ``{D, A}``;
  outcome bit 0 is ``H`` or ``D``, bit 1 is ``V`` or ``A``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

SPEED_OF_LIGHT_M_S = 299_792_458.0

_NORM_TOL = 1e-9


class Wavelength(float):
    """Vacuum wavelength in nanometers (strictly positive)."""

    def __new__(cls, nanometers: float):
        value = float(nanometers)
        if not value > 0.0 or math.isinf(value):
            raise ValueError(f"wavelength must be positive and finite, got {nanometers!r}")
        return super().__new__(cls, value)

    @property
    def nanometers(self) -> float:
        return float(self)

    def __repr__(self) -> str:
        return f"Wavelength({float(self):g} nm)"


HBN_ZPL = Wavelength(575.0)
NIR_780 = Wavelength(780.0)
NIR_1060 = Wavelength(1060.0)
O_BAND = Wavelength(1330.0)
C_BAND = Wavelength(1550.0)
CAMPUS_WAVELENGTHS = (HBN_ZPL, NIR_780, NIR_1060, O_BAND, C_BAND)


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1

    @classmethod
    def parse(cls, value: "Basis | int | str") -> "Basis":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


def _canonical(h: complex, v: complex) -> tuple[complex, complex]:
    lead = h if abs(h) > 1e-12 else v
    phase = cmath.exp(-1j * cmath.phase(lead))
    h, v = h * phase, v * phase
    # the leading amplitude is real-positive after the rotation
    if abs(h) > 1e-12:
        h = complex(abs(h), 0.0)
    else:
        v = complex(abs(v), 0.0)
    return h, v


@dataclass(frozen=True, eq=False)
class JonesState:
    """Pure polarization state of one photon.

    Amplitudes are stored canonicalized (leading nonzero amplitude made real
    and positive), so two states differing only by a global phase compare
    and hash equal.
    """

    amp_h: complex
    amp_v: complex

    def __post_init__(self):
        h, v = complex(self.amp_h), complex(self.amp_v)
        norm = abs(h) ** 2 + abs(v) ** 2
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValueError(f"Jones state not normalized (|h|^2+|v|^2 = {norm!r})")
        h, v = _canonical(h, v)
        object.__setattr__(self, "amp_h", h)
        object.__setattr__(self, "amp_v", v)

    @classmethod
    def from_amplitudes(cls, h: complex, v: complex) -> "JonesState":
        """Normalize arbitrary nonzero amplitudes into a state."""
        n = math.sqrt(abs(h) ** 2 + abs(v) ** 2)
        if n == 0.0:
            raise ValueError("zero vector is not a polarization state")
        return cls(h / n, v / n)

    @classmethod
    def linear(cls, theta: float) -> "JonesState":
        """Linear polarization at ``theta`` radians from horizontal."""
        return cls(math.cos(theta), math.sin(theta))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_h, self.amp_v], dtype=complex)

    def orthogonal(self) -> "JonesState":
        return JonesState(-self.amp_v.conjugate(), self.amp_h.conjugate())

    def __eq__(self, other):
        if not isinstance(other, JonesState):
            return NotImplemented
        return (abs(self.amp_h - other.amp_h) <= _NORM_TOL
                and abs(self.amp_v - other.amp_v) <= _NORM_TOL)

    def __hash__(self):
        return hash(tuple(round(x, 9) + 0.0 for x in (
            self.amp_h.real, self.amp_h.imag, self.amp_v.real, self.amp_v.imag)))


_S = 1 / math.sqrt(2)
H = JonesState(1, 0)
V = JonesState(0, 1)
D = JonesState(_S, _S)
A = JonesState(_S, -_S)
R = JonesState(_S, 1j * _S)
L = JonesState(_S, -1j * _S)

BASIS_STATES = {
    Basis.RECTILINEAR: (H, V),
    Basis.DIAGONAL: (D, A),
}

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


@dataclass(frozen=True)
class PolarizationUnitary:
    """2x2 unitary ``[[a, b], [c, d]]`` acting on Jones vectors."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        m = self.matrix
        if not np.allclose(m.conj().T @ m, np.eye(2), rtol=0.0, atol=_NORM_TOL):
            raise ValueError("matrix is not unitary")
        if abs(abs(np.linalg.det(m)) - 1.0) > _NORM_TOL:
            raise ValueError("determinant magnitude differs from 1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @classmethod
    def from_matrix(cls, m, reorthonormalize: bool = False) -> "PolarizationUnitary":
        m = np.asarray(m, dtype=complex)
        if reorthonormalize:
            # nearest unitary in Frobenius norm (polar factor)
            w, _, vh = np.linalg.svd(m)
            m = w @ vh
        return cls(complex(m[0, 0]), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1]))

    @classmethod
    def identity(cls) -> "PolarizationUnitary":
        return cls(1, 0, 0, 1)

    @classmethod
    def rotation(cls, theta: float) -> "PolarizationUnitary":
        """Rotate linear polarization by ``theta`` radians (H -> cos H + sin V)."""
        c, s = math.cos(theta), math.sin(theta)
        return cls(c, -s, s, c)

    @classmethod
    def retarder(cls, phi: float) -> "PolarizationUnitary":
        """Phase ``phi`` on V relative to H."""
        return cls(1, 0, 0, cmath.exp(1j * phi))

    @classmethod
    def from_euler(cls, alpha: float, beta: float, gamma: float) -> "PolarizationUnitary":
        """ZYZ Euler form ``Rz(alpha) Ry(beta) Rz(gamma)`` in SU(2)."""

        def rz(t):
            return np.diag([cmath.exp(-0.5j * t), cmath.exp(0.5j * t)])

        cb, sb = math.cos(beta / 2), math.sin(beta / 2)
        ry = np.array([[cb, -sb], [sb, cb]], dtype=complex)
        return cls.from_matrix(rz(alpha) @ ry @ rz(gamma))

    @classmethod
    def from_rotation_vector(cls, angles) -> "PolarizationUnitary":
        """``exp(-i (g . sigma) / 2)``: rotation of the Poincare sphere by ``|g|``.

        The three components are the rotation angles about the sigma_x,
        sigma_y and sigma_z axes; drift steps and compensator perturbations
        draw them as independent gaussians.
        """
        g = np.asarray(angles, dtype=float)
        theta = float(np.linalg.norm(g))
        if theta == 0.0:
            return cls.identity()
        n = g / theta
        gen = n[0] * _PAULI[0] + n[1] * _PAULI[1] + n[2] * _PAULI[2]
        m = math.cos(theta / 2) * np.eye(2) - 1j * math.sin(theta / 2) * gen
        return cls.from_matrix(m)

    @classmethod
    def haar(cls, rng: np.random.Generator) -> "PolarizationUnitary":
        """Haar-random element of SU(2) via the ZYZ angles."""
        alpha, gamma = rng.uniform(0.0, 2 * math.pi, size=2)
        beta = math.acos(1.0 - 2.0 * rng.random())
        return cls.from_euler(float(alpha), beta, float(gamma))

    def inverse(self) -> "PolarizationUnitary":
        return PolarizationUnitary.from_matrix(self.matrix.conj().T)

    def __matmul__(self, other: "PolarizationUnitary") -> "PolarizationUnitary":
        if not isinstance(other, PolarizationUnitary):
            return NotImplemented
        return PolarizationUnitary.from_matrix(self.matrix @ other.matrix)

    def close_to(self, other: "PolarizationUnitary", tol: float = 1e-9) -> bool:
        """Equality up to a global phase."""
        overlap = abs(np.trace(self.matrix.conj().T @ other.matrix)) / 2
        return 1.0 - overlap <= tol


def apply_unitary(u: PolarizationUnitary, s: JonesState) -> JonesState:
    out = u.matrix @ s.vector
    # re-normalize rounding error only; unitarity was validated on construction
    return JonesState.from_amplitudes(complex(out[0]), complex(out[1]))


def projection_probability(s: JonesState, basis_state: JonesState) -> float:
    """Born probability ``|<basis|s>|^2``."""
    amp = basis_state.amp_h.conjugate() * s.amp_h + basis_state.amp_v.conjugate() * s.amp_v
    return min(1.0, max(0.0, abs(amp) ** 2))


def apply_unitary_array(u: PolarizationUnitary, vectors: np.ndarray) -> np.ndarray:
    """Apply ``u`` to an ``(N, 2)`` array of Jones vectors."""
    return vectors @ u.matrix.T


def projection_probability_array(vectors: np.ndarray, basis_state: JonesState) -> np.ndarray:
    amp = vectors @ basis_state.vector.conj()
    return np.clip(np.abs(amp) ** 2, 0.0, 1.0)


# --- spectra --------------------------------------------------------------

_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class SpectralProfile:
    """Normalized spectral density over wavelength.

    ``shape`` is ``"gaussian"`` (``width_nm`` is the FWHM) or
    ``"rectangle"`` (``width_nm`` is the full width).
    """

    shape: str
    center_nm: float
    width_nm: float

    def __post_init__(self):
        if self.shape not in ("gaussian", "rectangle"):
            raise ValueError(f"unknown spectral shape {self.shape!r}")
        if not self.width_nm > 0:
            raise ValueError("spectral width must be positive")
        if not self.center_nm > 0:
            raise ValueError("center wavelength must be positive")

    @classmethod
    def gaussian(cls, center_nm: float, fwhm_nm: float) -> "SpectralProfile":
        return cls("gaussian", float(center_nm), float(fwhm_nm))

    @classmethod
    def rectangle(cls, center_nm: float, width_nm: float) -> "SpectralProfile":
        return cls("rectangle", float(center_nm), float(width_nm))

    @property
    def sigma_nm(self) -> float:
        return self.width_nm * _FWHM_TO_SIGMA

    @property
    def edges(self) -> tuple[float, float]:
        half = self.width_nm / 2
        return self.center_nm - half, self.center_nm + half

    def density(self, wavelength_nm):
        x = np.asarray(wavelength_nm, dtype=float)
        if self.shape == "gaussian":
            s = self.sigma_nm
            return np.exp(-0.5 * ((x - self.center_nm) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        lo, hi = self.edges
        return np.where((x >= lo) & (x <= hi), 1.0 / self.width_nm, 0.0)

    def cdf(self, wavelength_nm: float) -> float:
        x = float(wavelength_nm)
        if self.shape == "gaussian":
            z = (x - self.center_nm) / (self.sigma_nm * math.sqrt(2.0))
            return 0.5 * math.erfc(-z)
        lo, hi = self.edges
        return min(1.0, max(0.0, (x - lo) / self.width_nm))

    def shifted_to(self, center_nm: float) -> "SpectralProfile":
        return SpectralProfile(self.shape, float(center_nm), self.width_nm)


def spectral_overlap(emission: SpectralProfile, passband: SpectralProfile) -> float:
    """Fraction of the emission density falling inside a rectangular passband.

    For a gaussian emitter this is a difference of error functions.
    """
    if passband.shape != "rectangle":
        raise ValueError("passband must be a rectangle profile")
    lo, hi = passband.edges
    frac = emission.cdf(hi) - emission.cdf(lo)
    return min(1.0, max(0.0, frac))


# --- WDM grid -------------------------------------------------------------

@dataclass(frozen=True)
class WdmChannel:
    index: int
    passband: SpectralProfile

    @property
    def center_nm(self) -> float:
        return self.passband.center_nm


def ghz_to_nm(spacing_ghz: float, at_nm: float) -> float:
    """Wavelength width equivalent to a frequency spacing at ``at_nm``."""
    return (at_nm * 1e-9) ** 2 * spacing_ghz * 1e9 / SPEED_OF_LIGHT_M_S * 1e9


@dataclass(frozen=True)
class WdmGrid:
    """Uniform frequency grid of channels ``+-1 .. +-n_pairs``.

    Channel ``k`` sits ``k * spacing_ghz`` above the degeneracy frequency, so
    channels ``+k`` and ``-k`` are energy-conserving partners for a pump at
    twice the degeneracy frequency.  Index 0 (the degenerate channel) is not
    part of the grid.
    """

    degeneracy_nm: float = 1550.0
    spacing_ghz: float = 100.0
    n_pairs: int = 4

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("grid needs at least one channel pair")
        if not self.spacing_ghz > 0 or not self.degeneracy_nm > 0:
            raise ValueError("grid spacing and degeneracy wavelength must be positive")
        top = self._freq_ghz(self.n_pairs) + self.spacing_ghz / 2
        bottom = self._freq_ghz(-self.n_pairs) - self.spacing_ghz / 2
        if bottom <= 0 or top <= 0:
            raise ValueError("grid extends to non-positive frequency")

    @property
    def center_frequency_ghz(self) -> float:
        return SPEED_OF_LIGHT_M_S / (self.degeneracy_nm * 1e-9) / 1e9

    def _freq_ghz(self, k: float) -> float:
        return self.center_frequency_ghz + k * self.spacing_ghz

    def _nm(self, f_ghz: float) -> float:
        return SPEED_OF_LIGHT_M_S / (f_ghz * 1e9) * 1e9

    @property
    def indices(self) -> list[int]:
        return [k for k in range(-self.n_pairs, self.n_pairs + 1) if k != 0]

    def channel(self, index: int) -> WdmChannel:
        if index == 0 or abs(index) > self.n_pairs:
            raise KeyError(f"channel {index} not in grid")
        # higher frequency is shorter wavelength
        lo = self._nm(self._freq_ghz(index + 0.5))
        hi = self._nm(self._freq_ghz(index - 0.5))
        return WdmChannel(index, SpectralProfile.rectangle((lo + hi) / 2, hi - lo))

    def channels(self) -> list[WdmChannel]:
        return [self.channel(k) for k in self.indices]

    def partner(self, channel: WdmChannel | int) -> WdmChannel:
        index = channel.index if isinstance(channel, WdmChannel) else int(channel)
        return self.channel(-index)
