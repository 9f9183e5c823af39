from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtestbed.photonics import (
    A, D, H, V, JonesState, PolarizationUnitary, SpectralProfile, WdmGrid,
    apply_unitary, projection_probability, spectral_overlap,
)


def test_identity_keeps_state():
    assert apply_unitary(PolarizationUnitary.identity(), H) == H


def test_rotation_45_maps_h_to_d():
    assert apply_unitary(PolarizationUnitary.rotation(math.pi / 4), H) == D


def test_global_phase_is_ignored():
    assert JonesState(1j, 0) == H
    assert JonesState(-1 / math.sqrt(2), -1 / math.sqrt(2)) == D


def test_random_states_are_normalized():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        z = rng.normal(size=2) + 1j * rng.normal(size=2)
        s = JonesState.from_amplitudes(*z)
        assert abs(np.vdot(s.vector, s.vector).real - 1.0) < 1e-9


def test_unnormalized_state_rejected():
    with pytest.raises(ValueError):
        JonesState(1, 1)


def test_unitary_then_inverse_restores_state():
    rng = np.random.default_rng(1)
    for _ in range(200):
        u = PolarizationUnitary.haar(rng)
        z = rng.normal(size=2) + 1j * rng.normal(size=2)
        s = JonesState.from_amplitudes(*z)
        back = apply_unitary(u.inverse(), apply_unitary(u, s))
        assert abs(abs(np.vdot(back.vector, s.vector)) - 1.0) < 1e-9


def test_non_unitary_matrix_rejected():
    with pytest.raises(ValueError):
        PolarizationUnitary.from_matrix([[1, 1], [0, 1]])


@pytest.mark.parametrize("s,b,p", [(H, H, 1.0), (H, V, 0.0), (D, H, 0.5), (A, D, 0.0)])
def test_projection_examples(s, b, p):
    assert projection_probability(s, b) == pytest.approx(p, abs=1e-12)


@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
def test_projection_complement_sums_to_one(t, u):
    s = JonesState.linear(t)
    b = JonesState.linear(u)
    total = projection_probability(s, b) + projection_probability(s, b.orthogonal())
    assert total == pytest.approx(1.0, abs=1e-12)


def test_overlap_wide_passband():
    assert spectral_overlap(SpectralProfile.gaussian(575, 10), SpectralProfile.rectangle(575, 200)) >= 0.999


def test_overlap_disjoint():
    assert spectral_overlap(SpectralProfile.gaussian(575, 10), SpectralProfile.rectangle(1550, 1)) < 1e-12


def test_overlap_matches_trapezoid():
    em = SpectralProfile.gaussian(575, 10)
    pb = SpectralProfile.rectangle(575, 10)
    x = np.linspace(570, 580, 10_000)
    sigma = 10 / (2 * math.sqrt(2 * math.log(2)))
    y = np.exp(-0.5 * ((x - 575) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    oracle = float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)
    assert spectral_overlap(em, pb) == pytest.approx(oracle, abs=1e-6)


@given(st.floats(0.1, 50), st.floats(0.1, 50))
def test_overlap_monotone_in_passband_width(w1, w2):
    em = SpectralProfile.gaussian(575, 10)
    lo, hi = sorted((w1, w2))
    assert spectral_overlap(em, SpectralProfile.rectangle(575, lo)) <= \
        spectral_overlap(em, SpectralProfile.rectangle(575, hi)) + 1e-15


@given(st.floats(0, 1))
def test_overlap_in_unit_interval(shift):
    v = spectral_overlap(SpectralProfile.gaussian(575, 20), SpectralProfile.rectangle(575 + 40 * shift, 5))
    assert 0.0 <= v <= 1.0


def test_grid_partners_symmetric_about_degeneracy():
    g = WdmGrid(1550.0, 100.0, 4)
    assert g.indices == [-4, -3, -2, -1, 1, 2, 3, 4]
    for k in (1, 2, 3, 4):
        c_plus = g.channel(k)
        c_minus = g.partner(k)
        assert c_minus.index == -k
        # passband edges sit at equal frequency detuning on both sides
        f0 = 299_792_458.0 / 1550.0
        lo_p, hi_p = c_plus.passband.edges
        lo_m, hi_m = c_minus.passband.edges
        assert 299_792_458.0 / hi_p - f0 == pytest.approx(f0 - 299_792_458.0 / lo_m, rel=1e-9)
        assert c_plus.center_nm < 1550.0 < c_minus.center_nm
    with pytest.raises(KeyError):
        g.channel(0)
