from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtestbed.errors import InsufficientExchanges, NoPeak, UnsortedStream
from qtestbed.sources import EmitterParams, WcpParams, sample_spe, sample_wcp
from qtestbed.timing import (
    ClockModel, DetectorParams, TagStream, TimeTag, detect, estimate_clock, estimate_g2,
    exchange_offset, find_offset, hbt_split, match_coincidences, read_tags_csv,
    two_way_exchanges,
)

IDEAL = DetectorParams(1.0, 0.0, 0.0, 0.0)


def test_ideal_detector_single_tag():
    tags = detect([1000], [1], IDEAL, ClockModel(), np.random.default_rng(0))
    assert tags.t_ps.tolist() == [1000]


def test_dark_counts_only_when_blind():
    det = DetectorParams(0.0, 1000.0, 0.0, 0.0)
    n = 10**6
    rng = np.random.default_rng(1)
    tags = detect(np.arange(n) * 10_000, np.ones(n, dtype=int), det, ClockModel(), rng, gate_ps=1000.0)
    # 1000 Hz over 1 ns gates is 1e-6 darks per gate
    assert abs(len(tags) - 1.0) <= 5


def test_dead_time_merges_close_photons():
    det = DetectorParams(1.0, 0.0, 1000.0, 0.0)
    tags = detect([1000, 1010], [1, 1], det, ClockModel(), np.random.default_rng(2))
    assert len(tags) == 1


def test_clock_transform():
    c = ClockModel(offset_ps=5000, drift_ppm=3.0)
    assert c.to_local(10**12) == pytest.approx(10**12 * (1 + 3e-6) + 5000)
    assert c.to_true(c.to_local(123456789.0)) == pytest.approx(123456789.0)


def test_constructed_coincidences():
    a = [100_000, 200_000, 300_000]
    b = [t + 5000 for t in a]
    rep = match_coincidences(a, b, 1000, 5000)
    assert len(rep) == 3
    assert rep.index_a.tolist() == rep.index_b.tolist() == [0, 1, 2]
    assert rep.pairs[0] == (100_000, 105_000)


def test_empty_stream_coincidences():
    assert len(match_coincidences([], [1, 2, 3], 1000)) == 0


def test_unsorted_stream_rejected():
    with pytest.raises(UnsortedStream):
        match_coincidences([3, 1], [1, 2], 10)


def test_accidental_rate():
    rng = np.random.default_rng(3)
    rate, T, w = 1e-6, 1e11, 1000.0  # 1 MHz over 0.1 s, 1 ns window
    a = np.sort(rng.uniform(0, T, rng.poisson(rate * T))).astype(np.int64)
    b = np.sort(rng.uniform(0, T, rng.poisson(rate * T))).astype(np.int64)
    expected = rate * rate * T * w
    n = len(match_coincidences(a, b, w))
    assert abs(n - expected) < 3 * math.sqrt(expected)


@given(st.lists(st.integers(0, 10**6), max_size=40), st.lists(st.integers(0, 10**6), max_size=40),
       st.integers(0, 2000), st.integers(-1000, 1000))
def test_coincidence_invariants(a, b, w, off):
    a, b = sorted(a), sorted(b)
    rep = match_coincidences(a, b, w, off)
    assert len(set(rep.index_a.tolist())) == len(rep)
    assert len(set(rep.index_b.tolist())) == len(rep)
    assert np.all(np.abs(rep.t_a - (rep.t_b - off)) <= w / 2)


@given(st.lists(st.integers(0, 10**6), max_size=40, unique=True),
       st.lists(st.integers(0, 10**6), max_size=40, unique=True), st.integers(0, 500))
def test_coincidence_count_symmetric(a, b, w):
    a, b = sorted(a), sorted(b)
    assert len(match_coincidences(a, b, w)) == len(match_coincidences(b, a, w))


def _correlated(rng, delay, sigma, n=20_000):
    base = np.sort(rng.uniform(0, 1e10, n))
    a = np.sort(base + rng.normal(0, sigma, n)).astype(np.int64)
    b = np.sort(base + delay + rng.normal(0, sigma, n)).astype(np.int64)
    return a, b


def test_find_offset_implanted_delay():
    a, b = _correlated(np.random.default_rng(4), 12345, 50)
    assert abs(find_offset(a, b, 50_000, 10) - 12345) <= 150


def test_find_offset_identical_streams():
    a, _ = _correlated(np.random.default_rng(5), 0, 0)
    assert find_offset(a, a, 10_000, 10) == 0


def test_find_offset_independent_streams():
    rng = np.random.default_rng(6)
    a = np.sort(rng.uniform(0, 1e10, 20_000)).astype(np.int64)
    b = np.sort(rng.uniform(0, 1e10, 20_000)).astype(np.int64)
    with pytest.raises(NoPeak):
        find_offset(a, b, 50_000, 100)


def test_single_exchange_offset():
    assert exchange_offset(0, 1100, 2000, 2900) == 100


def test_estimate_clock_implanted():
    ex = two_way_exchanges(ClockModel(offset_ps=5000, drift_ppm=3.0), 8_000_000.0, 30)
    off, drift = estimate_clock(ex)
    assert abs(off - 5000) <= 10
    assert abs(drift - 3.0) <= 0.03


def test_estimate_clock_ideal():
    off, drift = estimate_clock(two_way_exchanges(ClockModel(), 5_000_000.0, 10))
    assert abs(off) < 1e-6 and abs(drift) < 1e-9


def test_estimate_clock_needs_two():
    with pytest.raises(InsufficientExchanges):
        estimate_clock([(0, 1100, 2000, 2900)])


def _g2(counts, seed):
    det = DetectorParams(0.8, 100.0, 10_000.0, 42.0)
    a, b = hbt_split(counts, det, np.random.default_rng(seed), period_ps=20_000)
    return estimate_g2(a, b, counts.size, 1000.0)


def test_g2_ideal_emitter():
    n = 10**7
    counts = sample_spe(EmitterParams(g2_zero=0.0, brightness_p1=0.8), np.random.default_rng(7), size=n)
    assert _g2(counts, 8) < 0.01


def test_g2_wcp():
    n = 10**7
    counts = sample_wcp(WcpParams(0.1), np.random.default_rng(9), size=n)
    assert abs(_g2(counts, 10) - 1.0) <= 0.05


def test_g2_emitter():
    n = 10**7
    counts = sample_spe(EmitterParams(), np.random.default_rng(11), size=n)
    assert abs(_g2(counts, 12) - 0.10) <= 0.02


def test_tag_csv_round_trip():
    s1 = TagStream.from_tags([TimeTag(5, 1, "A"), TimeTag(3, 0, "A")])
    s2 = TagStream.from_tags([TimeTag(7, 2, "B")])
    first, second = io.StringIO(), io.StringIO()
    s1.sorted().to_csv(first)
    s2.to_csv(second)
    # one file holding both taggers
    buf = io.StringIO(first.getvalue() + second.getvalue().split("\n", 1)[1])
    back = read_tags_csv(buf)
    assert back["A"].t_ps.tolist() == [3, 5]
    assert back["A"].channel.tolist() == [0, 1]
    assert back["B"].t_ps.tolist() == [7]


def test_merge_is_sorted():
    rng = np.random.default_rng(13)
    parts = [TagStream(np.sort(rng.integers(0, 10**6, 100)), np.full(100, c), "x") for c in range(3)]
    assert TagStream.merge(parts).is_sorted()
