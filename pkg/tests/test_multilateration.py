import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from oracles import central_gradient, grid_search_min
from ubiloc.geometry import AnchorTag, TagMeasurement, euclidean_distance
from ubiloc.multilateration import (
    DegenerateGeometryError,
    FixResult,
    InsufficientAnchorsError,
    Method,
    MultishotConfig,
    MultishotState,
    NoFixError,
    linear_init,
    multishot_step,
    run_trajectory,
    solve_fix,
    weighted_cost,
)
from ubiloc.oneshot import HeadingEstimate, HeadingSource
from ubiloc.selector import RangeHistory, SelectionKind, SelectionPolicy
from ubiloc.simenv import NoiseModel

TRI = [(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)]


def exact(anchors, p):
    return [(a, math.dist(a, p)) for a in anchors]


def cost_fn(rings):
    pos = np.array([r[0] for r in rings], float)
    d = np.array([r[1] for r in rings], float)
    w = np.array([r[2] for r in rings], float)
    return lambda p: weighted_cost(p, pos, d, w)


# --- linear_init -----------------------------------------------------------------


def test_linear_init_example():
    rings = list(zip(TRI, (math.sqrt(2), math.sqrt(10), math.sqrt(5))))
    assert linear_init(rings) == pytest.approx((1.0, 1.0), abs=1e-12)


def test_linear_init_collinear():
    with pytest.raises(DegenerateGeometryError):
        linear_init([((0.0, 0.0), 1.0), ((2.0, 0.0), 1.0), ((5.0, 0.0), 4.0)])


def test_linear_init_at_anchor():
    assert linear_init(exact(TRI, (4.0, 0.0))) == pytest.approx((4.0, 0.0), abs=1e-12)


def test_linear_init_needs_three():
    with pytest.raises(InsufficientAnchorsError):
        linear_init(exact(TRI[:2], (1.0, 1.0)))


# --- solve_fix -------------------------------------------------------------------


def test_solve_fix_example():
    rings = [(a, r, 1.0) for a, r in exact(TRI, (1.0, 1.0))]
    fix = solve_fix(rings, (3.0, 2.5))
    assert euclidean_distance(fix.position, (1.0, 1.0)) < 1e-9
    assert fix.residual_rms_m == pytest.approx(0.0, abs=1e-9)
    assert fix.condition_ok and fix.method is Method.MULTILATERATION


def test_solve_fix_symmetry():
    anchors = [(-1.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    rings = [(a, r, 1.0) for a, r in exact(anchors, (0.0, 2.5))]
    fix = solve_fix(rings, (0.3, 2.0))
    assert abs(fix.position[0]) < 1e-9


def test_solve_fix_errors():
    with pytest.raises(InsufficientAnchorsError):
        solve_fix([((0, 0), 1, 1), ((1, 0), 1, 1)], (0, 0))
    with pytest.raises(ValueError):
        solve_fix([((0, 0), 1, 1), ((1, 0), 1, 1), ((0, 1), float("nan"), 1)], (0, 0))
    with pytest.raises(ValueError):
        solve_fix([((0, 0), 1, 1), ((1, 0), 1, 1), ((0, 1), 1, 0)], (0, 0))
    with pytest.raises(ValueError):
        solve_fix([((0, 0), 1, 1), ((1, 0), 1, 1), ((0, 1), 1, 1)], (math.inf, 0))


def test_collinear_fix_flagged():
    anchors = [(0.0, 0.0), (2.0, 0.0), (5.0, 0.0)]
    rings = [(a, r, 1.0) for a, r in exact(anchors, (1.0, 0.0))]
    fix = solve_fix(rings, (1.2, 0.0))
    assert not fix.condition_ok


def test_downweighted_outlier_monotone():
    """Inflating one range and shrinking its weight pulls the fix back to the truth."""
    anchors = [(0.0, 0.0), (6.0, 0.0), (0.0, 5.0), (6.0, 5.0)]
    truth = (2.0, 1.5)
    d = [math.dist(a, truth) for a in anchors]
    d[3] *= 1.3
    errs = []
    for wbad in (1.0, 0.3, 0.1, 0.01, 1e-4):
        w = [1.0, 1.0, 1.0, wbad]
        rings = list(zip(anchors, d, w))
        fix = solve_fix(rings, linear_init(list(zip(anchors, d))))
        oracle_cost, oracle_p = grid_search_min(anchors, d, w)
        assert weighted_cost(fix.position, np.array(anchors), np.array(d), np.array(w)) <= oracle_cost + 1e-6
        assert euclidean_distance(fix.position, oracle_p) < 2e-3
        errs.append(euclidean_distance(fix.position, truth))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_matches_grid_oracle_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = rng.integers(3, 7)
        anchors = rng.uniform(0, 8, (n, 2))
        truth = rng.uniform(1, 7, 2)
        d = np.hypot(*(anchors - truth).T) + rng.normal(0, 0.1, n)
        w = rng.uniform(0.5, 2.0, n)
        try:
            init = linear_init(list(zip(map(tuple, anchors), d)))
        except DegenerateGeometryError:
            continue
        fix = solve_fix(list(zip(map(tuple, anchors), d, w)), init)
        oracle_cost, _ = grid_search_min(anchors, d, w)
        assert weighted_cost(fix.position, anchors, d, w) <= oracle_cost + 1e-6


pts = st.tuples(st.floats(-20, 20), st.floats(-20, 20))


@settings(max_examples=150, deadline=None)
@given(st.lists(pts, min_size=3, max_size=3), pts, st.floats(0, 2 * math.pi), st.floats(0, 10))
def test_exact_recovery_from_nearby_init(anchors, truth, ang, dist):
    a = np.array(anchors)
    # keep the triangle well away from collinear
    u, v = a[1] - a[0], a[2] - a[0]
    area = abs(u[0] * v[1] - u[1] * v[0]) / 2
    sides = max(np.hypot(*(a[i] - a[j])) for i in range(3) for j in range(i))
    if sides < 1.0 or area < 0.05 * sides**2:
        return
    init = (truth[0] + dist * math.cos(ang), truth[1] + dist * math.sin(ang))
    rings = [(p, math.dist(p, truth), 1.0) for p in anchors]
    fix = solve_fix(rings, init)
    assert euclidean_distance(fix.position, truth) < 1e-9 * max(1.0, sides)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_weight_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    anchors = [tuple(p) for p in rng.uniform(0, 10, (5, 2))]
    truth = rng.uniform(2, 8, 2)
    d = [math.dist(a, truth) + rng.normal(0, 0.1) for a in anchors]
    w = rng.uniform(0.5, 3.0, 5)
    a = solve_fix(list(zip(anchors, d, w)), (5.0, 5.0))
    b = solve_fix(list(zip(anchors, d, w * c)), (5.0, 5.0))
    assert euclidean_distance(a.position, b.position) < 1e-9


def test_first_order_optimality():
    rng = np.random.default_rng(8)
    for _ in range(50):
        anchors = [tuple(p) for p in rng.uniform(0, 10, (rng.integers(3, 7), 2))]
        truth = rng.uniform(2, 8, 2)
        d = [math.dist(a, truth) + rng.normal(0, 0.1) for a in anchors]
        w = rng.uniform(0.5, 3.0, len(anchors))
        rings = list(zip(anchors, d, w))
        fix = solve_fix(rings, tuple(truth + 0.5))
        g = central_gradient(cost_fn(rings), fix.position)
        assert np.linalg.norm(g) < 1e-6 * max(1.0, float(np.sum(w)))


# --- multishot_step ----------------------------------------------------------------

ANCHORS = {i + 1: AnchorTag(i + 1, p) for i, p in enumerate([(0, 0), (8, 0), (8, 6), (0, 6), (4, 7), (9, 3)])}
HEAD = HeadingEstimate(0.0, HeadingSource.MAG_ANCHORED, 0.0)


def readings(truth, ids, t=0.0):
    out = []
    for i in ids:
        a = ANCHORS[i].position
        out.append(TagMeasurement(i, math.dist(a, truth), math.atan2(a[1] - truth[1], a[0] - truth[0]), t))
    return out


def test_multishot_six_anchors_exact():
    fix = multishot_step(MultishotState(None, HEAD), readings((3.0, 2.0), range(1, 7)), ANCHORS, SelectionPolicy(), RangeHistory())
    assert fix.method is Method.MULTILATERATION
    assert euclidean_distance(fix.position, (3.0, 2.0)) < 1e-6
    assert len(fix.anchors_used) == 6


def test_multishot_one_anchor_one_shot():
    fix = multishot_step(MultishotState(None, HEAD), readings((3.0, 2.0), [2]), ANCHORS, SelectionPolicy(), RangeHistory())
    assert fix.method is Method.ONE_SHOT
    assert euclidean_distance(fix.position, (3.0, 2.0)) < 1e-12


def test_multishot_blends_with_previous():
    prev = FixResult((1.0, 2.0), 0.0, (), Method.MULTILATERATION)
    fix = multishot_step(MultishotState(prev, HEAD), readings((3.0, 2.0), [2, 3]), ANCHORS, SelectionPolicy(), RangeHistory())
    assert fix.position == pytest.approx((2.0, 2.0))
    cfg = MultishotConfig(one_shot_blend=1.0)
    fix = multishot_step(MultishotState(prev, HEAD), readings((3.0, 2.0), [2]), ANCHORS, SelectionPolicy(), RangeHistory(), config=cfg)
    assert fix.position == pytest.approx((3.0, 2.0))


def test_multishot_nothing_visible():
    prev = FixResult((1.0, 2.0), 0.0, (1, 2, 3), Method.MULTILATERATION)
    fix = multishot_step(MultishotState(prev, HEAD), [], ANCHORS, SelectionPolicy(), RangeHistory())
    assert fix.method is Method.DEAD_RECKONED and fix.position == (1.0, 2.0)
    with pytest.raises(NoFixError):
        multishot_step(MultishotState(None, HEAD), [], ANCHORS, SelectionPolicy(), RangeHistory())


def test_multishot_unknown_anchor():
    with pytest.raises(KeyError):
        multishot_step(MultishotState(None, HEAD), [TagMeasurement(99, 1.0, 0.0)], ANCHORS, SelectionPolicy(), RangeHistory())


def test_multishot_respects_k():
    pol = SelectionPolicy(SelectionKind.K_NEAREST, 4)
    fix = multishot_step(MultishotState(None, HEAD), readings((3.0, 2.0), range(1, 7)), ANCHORS, pol, RangeHistory())
    assert len(fix.anchors_used) == 4


# --- run_trajectory ----------------------------------------------------------------


def test_zero_noise_trajectory_exact(square_room):
    recs = run_trajectory(square_room)
    assert recs
    for r in recs:
        if r.n_visible >= 3:
            assert r.fix.method is Method.MULTILATERATION
            assert euclidean_distance(r.truth.position, r.fix.position) < 1e-6


def test_trajectory_deterministic(square_room):
    sc = square_room.with_noise(**NoiseModel().__dict__)
    assert run_trajectory(sc) == run_trajectory(sc)


def test_noise_level_monotone(square_room):
    meds = []
    for s in (0.0, 0.05, 0.1, 0.2):
        errs = []
        for seed in range(10):
            noise = {**NoiseModel().__dict__, "range_sigma_los_m": s, "range_sigma_nlos_m": max(s, 0.15)}
            sc = square_room.with_seed(seed).with_noise(**noise)
            errs += [euclidean_distance(r.truth.position, r.fix.position) for r in run_trajectory(sc)]
        meds.append(np.median(errs))
    assert all(b >= a for a, b in zip(meds, meds[1:]))


def test_localizer_waits_for_indoor_entry():
    sc = make_scenario([(1, 0, 0), (2, 8, 0), (3, 4, 6)], [(4, -3, 3.0), (4, 2, 6.0), (4, 4)], sample_hz=5.0, indoor_start_s=8.0
    )
    recs = run_trajectory(sc)
    assert recs and recs[0].truth.timestamp > 8.0
