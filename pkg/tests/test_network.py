from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtestbed.cli import main
from qtestbed.errors import ConflictingAssignment, UnmappedChannel, WavelengthOutOfRange
from qtestbed.network import (
    SMF28, Element, FiberKind, FiberSpan, Link, RoadmConfig, Topology, UnitLosses,
    bundled_topology_path, load_topology, loss_budget, propagation_delay_ps, reconfigure,
    roadm_route, transmittance,
)
from qtestbed.photonics import WdmGrid


@pytest.fixture(scope="module")
def campus():
    return load_topology(bundled_topology_path("garching"))


def test_single_span_budget():
    kind = FiberKind("test", {1500.0: 0.2, 1600.0: 0.2})
    path = [FiberSpan(2.0, kind, splices=1, connectors=2)]
    assert loss_budget(path, 1550.0, UnitLosses(0.05, 0.3)) == pytest.approx(1.05, abs=1e-12)


def test_empty_path_budget():
    assert loss_budget([], 1550.0) == 0.0


def test_campus_route_matches_component_sum(campus):
    got = campus.loss_budget("TUM-PH", "MPQ", 1330.0)
    # two 1.5 km legs at 0.35 dB/km, two connectors per leg, ROADM in the hub
    oracle = 1.5 * 0.35 + 1.5 * 0.35 + 4 * 0.3 + 2.0
    assert oracle == pytest.approx(4.25, abs=1e-12)
    assert got == pytest.approx(oracle, abs=1e-9)


def test_interpolation_between_table_points():
    assert SMF28.attenuation(1440.0) == pytest.approx((0.35 + 0.2) / 2, abs=1e-12)


def test_visible_light_rejected_on_telecom_fiber(campus):
    with pytest.raises(WavelengthOutOfRange):
        SMF28.attenuation(575.0)
    with pytest.raises(WavelengthOutOfRange):
        campus.loss_budget("TUM-PH", "MPQ", 575.0)


def test_other_strand_carries_short_wavelengths(campus):
    assert campus.loss_budget("TUM-PH", "MPQ", 780.0, fiber="780-HP") == \
        pytest.approx(3.0 * 3.5 + 4 * 0.3 + 2.0, abs=1e-9)


@pytest.mark.parametrize("db,t", [(0.0, 1.0), (10.0, 0.1), (3.0, 0.5011872)])
def test_transmittance_examples(db, t):
    assert transmittance(db) == pytest.approx(t, abs=1e-6)


def test_transmittance_multiplicative():
    rng = np.random.default_rng(8)
    a, b = rng.uniform(0, 60, size=(2, 10_000))
    for x, y in zip(a, b):
        assert abs(transmittance(x + y) - transmittance(x) * transmittance(y)) <= 1e-12


@given(st.lists(st.tuples(st.floats(0.01, 5), st.integers(0, 3), st.integers(0, 4)), max_size=5),
       st.lists(st.tuples(st.floats(0.01, 5), st.integers(0, 3), st.integers(0, 4)), max_size=5))
def test_budget_additive_over_concatenation(p, q):
    mk = lambda items: [FiberSpan(l, SMF28, s, c) for l, s, c in items]
    a, b = mk(p), mk(q)
    assert loss_budget(a + b, 1550.0) == pytest.approx(loss_budget(a, 1550.0) + loss_budget(b, 1550.0),
                                                        abs=1e-9)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_span_length_must_be_positive(bad):
    with pytest.raises(ValueError):
        FiberSpan(bad, SMF28)


def test_negative_element_loss_rejected():
    with pytest.raises(ValueError):
        Element("x", -0.1)


def test_campus_is_star_with_direct_extra(campus):
    assert campus.is_star()
    assert campus.link("ZQE", "TUM-PH").direct
    assert campus.path("ZQE", "TUM-PH") == list(campus.link("ZQE", "TUM-PH").spans)


def test_triangle_violates_star():
    s = (FiberSpan(1.0, SMF28),)
    topo = Topology.build("H", [Link("H", "a", s), Link("H", "b", s), Link("a", "b", s)])
    assert not topo.is_star()


def test_propagation_delay():
    # 1 km at group index 1.468 is about 4.9 us
    assert propagation_delay_ps([FiberSpan(1.0, SMF28)]) == pytest.approx(1.468 / 299_792_458.0 * 1e15, rel=1e-12)


def test_roadm_identity():
    cfg = RoadmConfig({(1, 3): 1})
    assert roadm_route(cfg, 1, 3)[0] == 1


def test_roadm_swap_and_channel_object():
    cfg = RoadmConfig({(1, 3): 2, (2, 3): 1})
    assert roadm_route(cfg, 1, 3) == (2, 2.0)
    grid = WdmGrid(n_pairs=4)
    assert roadm_route(cfg, 2, grid.channel(3))[0] == 1


def test_reconfigure_then_route():
    cfg = RoadmConfig({(1, 3): 1})
    new = reconfigure(cfg, {(1, 3): 4})
    assert roadm_route(new, 1, 3)[0] == 4
    assert roadm_route(cfg, 1, 3)[0] == 1


def test_reconfigure_empty_is_equal():
    cfg = RoadmConfig({(1, 3): 2, (2, 3): 1})
    assert reconfigure(cfg, {}) == cfg


def test_reconfigure_conflict():
    cfg = RoadmConfig({(1, 3): 2, (2, 3): 1})
    with pytest.raises(ConflictingAssignment):
        reconfigure(cfg, {(1, 3): 1})


def test_unmapped_channel():
    with pytest.raises(UnmappedChannel):
        roadm_route(RoadmConfig(), 1, 1)


def test_loss_budget_cli(tmp_path, capsys):
    rc = main(["loss-budget", "garching", "TUM-PH", "MPQ", "--wavelength", "1330", "--out", str(tmp_path)])
    assert rc == 0
    doc = json.loads((tmp_path / "loss_budget.json").read_text())
    assert doc["loss_db"] == pytest.approx(1.5 * 0.35 * 2 + 4 * 0.3 + 2.0, abs=1e-9)
    assert "TUM-PH -> MPQ" in capsys.readouterr().out


def test_loss_budget_cli_out_of_range():
    assert main(["loss-budget", "garching", "TUM-PH", "MPQ", "--wavelength", "575"]) == 3
