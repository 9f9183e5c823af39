from __future__ import annotations

import io
import math

import numpy as np
import pytest

from qtestbed.photonics import D, H, Basis, PolarizationUnitary
from qtestbed.polarization import (
    Compensator, DriftProcess, drift_advance, drift_step, feedback_loop, pam_measure,
    reference_qber,
)


def _unitary_error(u: PolarizationUnitary) -> float:
    m = u.matrix
    return float(np.abs(m.conj().T @ m - np.eye(2)).max())


def test_static_drift_never_moves():
    u = PolarizationUnitary.haar(np.random.default_rng(0))
    d = DriftProcess(0.1, "static", u)
    assert drift_step(d, np.random.default_rng(1), 100).current == u


def test_zero_sigma_never_moves():
    d = DriftProcess(0.0, "random_walk")
    assert drift_step(d, np.random.default_rng(2), 100).current == d.current


def test_long_walk_stays_unitary():
    d = drift_step(DriftProcess(0.01, "random_walk"), np.random.default_rng(3), 10_000)
    assert _unitary_error(d.current) < 1e-8
    assert not d.current.close_to(PolarizationUnitary.identity())


def test_block_advance_stays_unitary():
    rng = np.random.default_rng(4)
    d = DriftProcess(1e-3, "random_walk")
    for _ in range(100):
        d = drift_advance(d, rng, 50_000)
    assert _unitary_error(d.current) < 1e-9


def test_pam_eigenstates():
    rng = np.random.default_rng(5)
    assert all(pam_measure(H, Basis.RECTILINEAR, rng) == (0, Basis.RECTILINEAR) for _ in range(1000))
    assert all(pam_measure(D, Basis.DIAGONAL, rng)[0] == 0 for _ in range(1000))


def test_pam_conjugate_basis_is_fair():
    rng = np.random.default_rng(6)
    n = 10**5
    zeros = sum(pam_measure(H, Basis.DIAGONAL, rng)[0] == 0 for _ in range(n))
    assert abs(zeros / n - 0.5) < 3 * math.sqrt(0.25 / n)


def test_reference_qber_identity():
    eye = PolarizationUnitary.identity()
    assert reference_qber(eye, Compensator(eye), 10_000, np.random.default_rng(8)) == 0.0


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.7])
def test_reference_qber_malus(theta):
    n = 100_000
    q = reference_qber(PolarizationUnitary.rotation(theta), Compensator(), n,
                       np.random.default_rng(9), references="H")
    p = math.sin(theta) ** 2
    assert abs(q - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_reference_qber_exact_inverse():
    u = PolarizationUnitary.haar(np.random.default_rng(10))
    q = reference_qber(u, Compensator(u.inverse()), 100_000, np.random.default_rng(11))
    assert q < 1e-4


def test_feedback_identity_drift():
    comp, rep = feedback_loop(DriftProcess(0.0, "static"), Compensator(), 0.01, 500, 200,
                              np.random.default_rng(12))
    assert rep.converged and rep.iterations <= 1
    assert rep.final_qber <= 0.01


def test_feedback_zero_iterations():
    comp, rep = feedback_loop(DriftProcess(0.0, "static"), Compensator(), 0.01, 0, 200,
                              np.random.default_rng(13))
    assert not rep.converged
    assert rep.reference_qber_history == []


def test_feedback_bookkeeping():
    rng = np.random.default_rng(14)
    d = DriftProcess(0.0, "static", PolarizationUnitary.haar(rng))
    comp, rep = feedback_loop(d, Compensator(), 0.01, 300, 200, rng)
    assert len(rep.reference_qber_history) == rep.iterations
    assert rep.accepted + rep.rejected == rep.iterations
    assert rep.acceptance_violations() == []
    assert _unitary_error(comp.correction) < 1e-9
    assert 0 < comp.step_scale <= 0.1 + 1e-15


def test_feedback_csv():
    rng = np.random.default_rng(15)
    d = DriftProcess(0.0, "static", PolarizationUnitary.haar(rng))
    _, rep = feedback_loop(d, Compensator(), 0.01, 20, 200, rng)
    buf = io.StringIO()
    rep.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,qber,accepted"
    assert len(lines) == rep.iterations + 1


def test_feedback_rejects_bad_target():
    with pytest.raises(ValueError):
        feedback_loop(DriftProcess(), Compensator(), 0.6, 10, 200, np.random.default_rng(0))
