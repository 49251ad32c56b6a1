import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthsync.errors import AlignmentInfeasibleError, InvalidInputError
from depthsync.simulator import OracleProvider, record_pair
from depthsync.temporal import candidate_shifts, find_time_shift, match_frames
from conftest import small_rig
from oracles import argmin_match


def jittered(rng, n, period_us, jitter_us, start_us=0):
    t = start_us + np.arange(n) * period_us + rng.normal(0, jitter_us, n)
    t = np.rint(t).astype(np.int64)
    return np.maximum.accumulate(t) + np.arange(n)  # strictly increasing


def test_identical_lists():
    t = np.arange(10) * 33_333
    m = match_frames(t, t, 0.0)
    assert [(i, j) for i, j, _ in m.pairs] == [(i, i) for i in range(10)]
    assert all(g == 0 for *_, g in m.pairs)


def test_hand_example():
    m = match_frames(np.array([0, 100_000, 200_000]), np.array([95_000, 105_000]), 0.0)
    assert [(i, j) for i, j, _ in m.pairs] == [(0, 0), (1, 0), (2, 1)]
    np.testing.assert_allclose([g for *_, g in m.pairs], [95, 5, 95])


def test_ties_go_to_smaller_index():
    m = match_frames(np.array([100]), np.array([90, 110]), 0.0)
    assert m.pairs[0][1] == 0


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        lq = jittered(rng, rng.integers(5, 60), 33_333, 2000, rng.integers(0, 50_000))
        hq = jittered(rng, rng.integers(5, 60), 40_000, 2000, rng.integers(0, 50_000))
        delta = float(rng.uniform(-60, 60))
        m = match_frames(lq, hq, delta)
        assert [j for _, j, _ in m.pairs] == argmin_match(lq.astype(float), hq.astype(float), delta * 1000)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(-500_000, 500_000), st.floats(-60, 60))
def test_shift_equivariance(seed, c_us, delta):
    rng = np.random.default_rng(seed)
    lq = jittered(rng, 30, 33_333, 1500, 1_000_000)
    hq = jittered(rng, 25, 40_000, 1500, 1_000_000)
    a = match_frames(lq, hq, delta)
    b = match_frames(lq, hq + c_us, delta - c_us / 1000.0)
    assert [p[:2] for p in a.pairs] == [p[:2] for p in b.pairs]


def test_gap_bounded_by_half_interval():
    rng = np.random.default_rng(1)
    lq = jittered(rng, 60, 33_333, 1000, 100_000)
    hq = jittered(rng, 50, 40_000, 1000, 100_000)
    m = match_frames(lq, hq, 0.0)
    half = np.max(np.diff(hq)) / 2000.0
    inner = [g for i, j, g in m.pairs if 0 < j < len(hq) - 1]
    assert max(inner) <= half + 1e-9


def test_each_lq_index_once():
    rng = np.random.default_rng(2)
    m = match_frames(jittered(rng, 40, 33_333, 1000), jittered(rng, 20, 50_000, 1000), 3.0)
    assert [i for i, _, _ in m.pairs] == list(range(40))


def test_candidate_grid():
    grid = candidate_shifts()
    assert len(grid) == 25 and grid[0] == -60 and grid[-1] == 60
    with pytest.raises(InvalidInputError):
        candidate_shifts(5, 10)
    with pytest.raises(InvalidInputError):
        candidate_shifts(60, 0)


@pytest.fixture(scope="module")
def shifted_pair(moving_scene):
    rig = small_rig(delta_ms=23.0)
    lq, hq, truth, info = record_pair(moving_scene, rig, 2.0, seed=1)
    return lq, hq, OracleProvider(moving_scene, rig.extrinsic, rig.delta_ms)


def test_recovers_injected_shift(shifted_pair):
    lq, hq, prov = shifted_pair
    res = find_time_shift(lq, hq, prov)
    assert res.delta_ms in (20.0, 25.0)
    assert len(res.candidates) == 25
    best = min(c.residual for c in res.candidates)
    assert res.residual == best


def test_thread_count_does_not_change_result(shifted_pair):
    lq, hq, prov = shifted_pair
    a = find_time_shift(lq, hq, prov, range_ms=15, threads=1)
    b = find_time_shift(lq, hq, prov, range_ms=15, threads=4)
    assert a.delta_ms == b.delta_ms and a.residual == b.residual
    np.testing.assert_array_equal(a.transform.rotation, b.transform.rotation)
    assert [c.residual for c in a.candidates] == [c.residual for c in b.candidates]


def test_coarse_to_fine_adds_half_steps(shifted_pair):
    lq, hq, prov = shifted_pair
    res = find_time_shift(lq, hq, prov, range_ms=30, coarse_to_fine=True)
    assert len(res.candidates) == 15
    grid_best = min(res.candidates[:13], key=lambda c: (c.residual, abs(c.delta_ms), c.delta_ms))
    assert {c.delta_ms for c in res.candidates[13:]} == {grid_best.delta_ms - 2.5, grid_best.delta_ms + 2.5}
    assert abs(res.delta_ms - 23.0) <= 5.0


def test_zero_shift(static_scene):
    rig = small_rig(delta_ms=0.0)
    lq, hq, _, _ = record_pair(static_scene, rig, 0.5, seed=2)
    # the static scene makes every shift equally good; ties go to |delta| = 0
    res = find_time_shift(lq, hq, OracleProvider(static_scene, rig.extrinsic, 0.0), range_ms=10)
    assert res.delta_ms == 0.0


def test_infeasible_everywhere(shifted_pair):
    lq, hq, prov = shifted_pair
    with pytest.raises(AlignmentInfeasibleError):
        find_time_shift(lq, hq, prov, range_ms=10, min_corr=10**9)
