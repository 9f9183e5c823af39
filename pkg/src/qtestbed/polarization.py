"""Fiber polarization drift, polarization analysis and accept/reject feedback.

Why two reference states suffice: if the net link transform ``M = C U``
maps H to H and D to D (each up to a phase), then ``M`` is diagonal in the
H/V basis, ``M = diag(e^{ia}, e^{ib})``, and ``M D`` is proportional to ``D``
only if ``a = b``.  So zero error on both references forces ``M`` to be the
identity up to an irrelevant global phase.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .photonics import (BASIS_STATES, Basis, JonesState, PolarizationUnitary, D, H,
                        projection_probability)

STATIC = "static"
RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class DriftProcess:
    step_sigma_rad: float = 1e-4
    mode: str = RANDOM_WALK
    current: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)

    def __post_init__(self):
        if self.mode not in (STATIC, RANDOM_WALK):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        if self.step_sigma_rad < 0:
            raise ValueError("step_sigma_rad must be non-negative")


def random_rotation(scale: float, rng: np.random.Generator) -> PolarizationUnitary:
    """Small random rotation: three per-axis gaussian angles of width ``scale``."""
    return PolarizationUnitary.from_rotation_vector(rng.normal(0.0, scale, size=3))


def drift_step(d: DriftProcess, rng: np.random.Generator, n_steps: int = 1) -> DriftProcess:
    """Advance the drift by ``n_steps`` slots.

    The accumulated unitary is projected back onto the unitary group after
    every step so rounding error cannot build up.
    """
    if d.mode == STATIC or d.step_sigma_rad == 0.0:
        return d
    m = d.current.matrix
    for _ in range(n_steps):
        m = random_rotation(d.step_sigma_rad, rng).matrix @ m
        w, _, vh = np.linalg.svd(m)
        m = w @ vh
    return replace(d, current=PolarizationUnitary.from_matrix(m))


def drift_advance(d: DriftProcess, rng: np.random.Generator, n_slots: int) -> DriftProcess:
    """Advance by ``n_slots`` in one draw of width ``step_sigma * sqrt(n_slots)``.

    Small independent rotations compose to leading order into a rotation
    whose angle variance is the sum, so a block of slots can be skipped
    without looping over it.
    """
    if d.mode == STATIC or d.step_sigma_rad == 0.0 or n_slots <= 0:
        return d
    step = random_rotation(d.step_sigma_rad * np.sqrt(n_slots), rng)
    return replace(d, current=PolarizationUnitary.from_matrix((step @ d.current).matrix,
                                                              reorthonormalize=True))


def pam_measure(s: JonesState, basis_choice, rng: np.random.Generator) -> tuple[int, Basis]:
    """Projective measurement in the chosen basis; returns ``(bit, basis)``."""
    basis = Basis.parse(basis_choice)
    p0 = projection_probability(s, BASIS_STATES[basis][0])
    bit = 0 if rng.random() < p0 else 1
    return bit, basis


@dataclass(frozen=True)
class Compensator:
    correction: PolarizationUnitary = field(default_factory=PolarizationUnitary.identity)
    step_scale: float = 0.1
    decay: float = 0.95

    def __post_init__(self):
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")


def reference_error_probabilities(drift: PolarizationUnitary,
                                  correction: PolarizationUnitary) -> tuple[float, float]:
    """Exact error probabilities of the H and D references after ``correction @ drift``."""
    m = (correction @ drift).matrix
    out_h = m @ H.vector
    out_d = m @ D.vector
    err_h = abs(out_h[1]) ** 2
    err_d = abs(out_d[0] - out_d[1]) ** 2 / 2
    return float(min(1.0, err_h)), float(min(1.0, err_d))


def reference_qber(drift: PolarizationUnitary, comp: Compensator | PolarizationUnitary,
                   n_pulses: int, rng: np.random.Generator,
                   references: str = "HD") -> float:
    """Measured error fraction of bright reference pulses through ``drift``.

    References alternate H, D, H, D ... (or are all H with ``references="H"``)
    and are measured in their own basis after the compensator.
    """
    if n_pulses < 100:
        raise ValueError("reference_qber needs at least 100 pulses")
    correction = comp.correction if isinstance(comp, Compensator) else comp
    err_h, err_d = reference_error_probabilities(drift, correction)
    if references == "H":
        errors = rng.binomial(n_pulses, err_h)
    elif references == "HD":
        n_h = (n_pulses + 1) // 2
        errors = rng.binomial(n_h, err_h) + rng.binomial(n_pulses - n_h, err_d)
    else:
        raise ValueError("references must be 'HD' or 'H'")
    return errors / n_pulses


@dataclass
class FeedbackReport:
    """Per-iteration record of a feedback run.

    ``reference_qber_history[i]`` is the candidate's measured QBER and
    ``incumbent_qber_history[i]`` the fresh measurement of the correction
    it competed against in the same iteration.
    """

    iterations: int = 0
    reference_qber_history: list[float] = field(default_factory=list)
    incumbent_qber_history: list[float] = field(default_factory=list)
    accepted_flags: list[bool] = field(default_factory=list)
    converged: bool = False

    @property
    def accepted(self) -> int:
        return sum(self.accepted_flags)

    @property
    def rejected(self) -> int:
        return self.iterations - self.accepted

    @property
    def final_qber(self) -> float:
        """Last measured QBER of the correction that was kept."""
        if not self.iterations:
            return float("nan")
        if self.accepted_flags[-1]:
            return self.reference_qber_history[-1]
        return self.incumbent_qber_history[-1]

    def acceptance_violations(self) -> list[int]:
        """Iterations where an accepted step raised the QBER (always empty)."""
        return [i for i, (q, qi, ok) in enumerate(zip(self.reference_qber_history,
                                                       self.incumbent_qber_history,
                                                       self.accepted_flags))
                if ok and q > qi]

    def to_csv(self, dest: str | Path | io.TextIOBase) -> None:
        """Write ``iter,qber,accepted`` rows."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                self.to_csv(fh)
            return
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["iter", "qber", "accepted"])
        for i, (q, ok) in enumerate(zip(self.reference_qber_history, self.accepted_flags)):
            w.writerow([i, repr(float(q)), int(ok)])


def feedback_loop(d: DriftProcess, comp: Compensator, target_qber: float, max_iter: int,
                  pulses_per_eval: int, rng: np.random.Generator,
                  drift_steps_per_eval: int = 0) -> tuple[Compensator, FeedbackReport]:
    """Stochastic hill climbing on the reference QBER.

    Each iteration perturbs the correction by a random rotation of size
    ``step_scale`` and measures the candidate and the current correction
    back to back.  The candidate is kept when its QBER is not higher (ties
    are kept, to walk off plateaus); otherwise it is dropped and
    ``step_scale`` shrinks by ``decay``.  An accepted step lets the scale
    recover by ``1 / decay``, never beyond its starting value.  The loop
    stops once the kept correction measures at or below ``target_qber``.

    The incumbent is re-measured every iteration because comparing against
    a stored value freezes the climb on the first lucky low reading.

    ``drift_steps_per_eval`` lets a random-walk drift keep moving while the
    loop runs.
    """
    if not 0.0 < target_qber < 0.5:
        raise ValueError("target_qber must lie in (0, 0.5)")
    report = FeedbackReport()
    drift = d
    max_scale = comp.step_scale
    for _ in range(max_iter):
        if drift_steps_per_eval:
            drift = drift_step(drift, rng, drift_steps_per_eval)
        candidate = random_rotation(comp.step_scale, rng) @ comp.correction
        q_inc = reference_qber(drift.current, comp, pulses_per_eval, rng)
        q = reference_qber(drift.current, candidate, pulses_per_eval, rng)
        ok = q <= q_inc
        if ok:
            comp = replace(comp, step_scale=min(max_scale, comp.step_scale / comp.decay),
                           correction=PolarizationUnitary.from_matrix(
                               candidate.matrix, reorthonormalize=True))
        else:
            comp = replace(comp, step_scale=comp.step_scale * comp.decay)
        report.iterations += 1
        report.reference_qber_history.append(q)
        report.incumbent_qber_history.append(q_inc)
        report.accepted_flags.append(ok)
        if (q if ok else q_inc) <= target_qber:
            report.converged = True
            break
    return comp, report
