import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexcurv import (
    DistanceOptions,
    DomainError,
    GraphSurface,
    LogSumExp,
    MaxAffine,
    NormScaled,
    PolygonalPath,
    QuadraticForm,
    Region,
    distance_matrix,
    intrinsic_distance,
    lift,
    refine_path,
)
from convexcurv.geometry import converged_path_length, path_lift_length
from oracles import GridMetric

FAST = DistanceOptions(k_max=9, m=64, multistart=2)
HALF = QuadraticForm.half_norm_squared(2)
ABS_X1 = MaxAffine(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
LSE = LogSumExp(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]), np.zeros(3), 0.5)


def surf(f, radius=1.0):
    return GraphSurface.build(f, Region(np.zeros(f.dimension), radius))


def test_surface_convention():
    s = GraphSurface(HALF, Region.ball([0, 0], 0.5), 0.3)
    assert s.lipschitz == 1.0
    assert s.bilipschitz**2 == pytest.approx(1 + s.lipschitz**2, rel=1e-15)
    s = surf(HALF, 2.0)
    assert s.lipschitz == pytest.approx(2.0)
    with pytest.raises(DomainError):
        GraphSurface.build(HALF, Region.ball([0.0], 1.0))


def test_flat_exactness():
    s = surf(QuadraticForm.zero(2), 6.0)
    e = intrinsic_distance(s, [0, 0], [3, 4])
    assert e.value == pytest.approx(5, abs=1e-12)
    assert e.upper_bound - e.lower_bound < 1e-9
    assert e.k == 2 and e.converged
    aff = surf(QuadraticForm.affine([0.5, -1.0], 2.0), 2.0)
    e = intrinsic_distance(aff, [-1, 0.2], [0.7, -0.9])
    chord = np.linalg.norm(lift(aff, [-1, 0.2]).as_vector() - lift(aff, [0.7, -0.9]).as_vector())
    assert e.value == pytest.approx(chord, abs=1e-12) and e.upper_bound - e.lower_bound < 1e-9


def test_one_dimensional_kink():
    s = surf(NormScaled(1.0, 1))
    e = intrinsic_distance(s, [-1.0], [1.0])
    assert e.value == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_fold_matches_unfolding():
    # unfolding the two half-planes of |x1| across the fold gives a flat plane
    # in which the lifted endpoints are 2*sqrt(2) apart
    e = intrinsic_distance(surf(ABS_X1), [-1, 0], [1, 0], FAST)
    assert e.value == pytest.approx(2 * math.sqrt(2), abs=1e-3)
    assert e.lower_bound <= e.value <= e.upper_bound


def test_paraboloid_matches_grid_oracle():
    e = intrinsic_distance(surf(HALF), [-1, 0], [1, 0], FAST)
    oracle = GridMetric(lambda X: 0.5 * (X**2).sum(-1), [0, 0], 1.0).distances([[-1, 0], [1, 0]])[0, 1]
    assert e.value == pytest.approx(oracle, abs=1e-3)


@pytest.mark.parametrize("f", [HALF, LSE, ABS_X1], ids=lambda f: f.family)
def test_grid_oracle_agreement_on_random_pairs(f, rng):
    s = surf(f, 0.5)
    P = Region.ball([0, 0], 0.5).sample(rng, 4)
    grid = GridMetric(lambda X: f(X), [0, 0], 0.5, cells=40).distances(P)
    D = distance_matrix(s, P, FAST)
    for i in range(4):
        for j in range(i + 1, 4):
            # the grid path is a valid competitor only up to its stencil error
            assert D[i][j].value <= grid[i, j] * (1 + 1e-3) + 1e-9
            assert D[i][j].value >= grid[i, j] * (1 - 1e-2)


def test_bounds_and_witness(rng):
    s = surf(LSE)
    for _ in range(5):
        a, b = Region.ball([0, 0], 1.0).sample(rng, 2)
        e = intrinsic_distance(s, a, b, FAST)
        chord = np.linalg.norm(lift(s, a).as_vector() - lift(s, b).as_vector())
        assert e.lower_bound >= chord - 1e-15
        assert chord >= np.linalg.norm(a - b) - 1e-15
        assert e.lower_bound <= e.value <= e.upper_bound
        assert e.upper_bound <= s.bilipschitz * np.linalg.norm(a - b) * (1 + 1e-12)
        assert np.array_equal(e.witness.start, a) and np.array_equal(e.witness.end, b)
        assert np.all(s.domain.contains(e.witness.breakpoints))
        assert path_lift_length(s, e.witness, e.m // (e.k - 1)) == pytest.approx(e.value, rel=1e-12)


def test_upper_bound_non_increasing_in_k(rng):
    s = surf(HALF)
    a, b = np.array([-0.8, 0.3]), np.array([0.7, -0.4])
    e = intrinsic_distance(s, a, b, DistanceOptions(k_max=17, m=64, multistart=2, tol=1e-9))
    by_m = {}
    for k, m, J in e.history:
        by_m.setdefault(m, []).append((k, J))
    for entries in by_m.values():
        for (k0, J0), (k1, J1) in zip(entries, entries[1:]):
            assert J1 <= J0 + 1e-12


points = st.tuples(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7)).map(np.array)


@settings(max_examples=10)
@given(points, points)
def test_symmetry(a, b):
    s = surf(HALF)
    e1 = intrinsic_distance(s, a, b, FAST)
    e2 = intrinsic_distance(s, b, a, FAST)
    assert abs(e1.value - e2.value) <= 1e-9
    assert abs(e1.upper_bound - e2.upper_bound) <= 1e-9
    assert np.allclose(e1.witness.breakpoints, e2.witness.breakpoints[::-1])


def test_refine_path_examples():
    flat = surf(QuadraticForm.zero(2), 10.0)
    p = PolygonalPath([[0, 0], [5, 5], [1, 0]])
    r = refine_path(flat, p, m=4, iterations=400)
    assert path_lift_length(flat, r, 4) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(r.start, p.start) and np.array_equal(r.end, p.end)

    fold = surf(ABS_X1, 2.0)
    p = PolygonalPath([[-1, 0], [0, 1], [1, 0]])
    before = path_lift_length(fold, p, 64)
    r = refine_path(fold, p, m=64)
    assert path_lift_length(fold, r, 64) <= before
    # every breakpoint (x, 0) lies on the straight geodesic, so only y is pinned
    assert abs(r.breakpoints[1][1]) < 1e-6
    assert converged_path_length(fold, r)[0] == pytest.approx(2 * math.sqrt(2), abs=1e-5)

    straight = PolygonalPath([[0, 0], [0.5, 0], [1, 0]])
    assert np.allclose(refine_path(flat, straight, 4).breakpoints, straight.breakpoints)


def test_distance_matrix_examples():
    flat = surf(QuadraticForm.zero(2), 2.0)
    D = distance_matrix(flat, [[0, 0], [1, 0], [0, 1]])
    vals = np.array([[d.value for d in row] for row in D])
    assert np.allclose(vals, vals.T) and np.allclose(np.diag(vals), 0)
    assert sorted([vals[0, 1], vals[0, 2], vals[1, 2]]) == pytest.approx([1, 1, math.sqrt(2)])

    s = surf(HALF)
    P = np.array([[0.1, 0.2], [-0.5, 0.3], [0.4, -0.6], [-0.2, -0.1]])
    opts = FAST.with_seed(5)
    D = distance_matrix(s, P, opts)
    from convexcurv._random import derive_seed
    for i in range(4):
        for j in range(i + 1, 4):
            single = intrinsic_distance(s, P[i], P[j], opts.with_seed(derive_seed(5, "pair", i, j)))
            assert D[i][j].value == single.value
            assert D[j][i].value == single.value
    for i in range(4):
        for j in range(4):
            for k in range(4):
                if len({i, j, k}) < 3:
                    continue
                gaps = sum(D[x][y].upper_bound - D[x][y].lower_bound for x, y in ((i, k), (i, j), (j, k)))
                assert D[i][k].value <= D[i][j].value + D[j][k].value + gaps

    two = distance_matrix(s, P[:2], opts)
    assert two[0][1].value == intrinsic_distance(s, P[0], P[1], opts.with_seed(derive_seed(5, "pair", 0, 1))).value


def test_parallel_matrix_is_identical():
    s = surf(LSE)
    P = Region.ball([0, 0], 1.0).sample(np.random.default_rng(3), 3)
    serial = distance_matrix(s, P, FAST)
    parallel = distance_matrix(s, P, FAST, jobs=2)
    for i in range(3):
        for j in range(3):
            assert serial[i][j].value == parallel[i][j].value
            assert serial[i][j].upper_bound == parallel[i][j].upper_bound


def test_domain_errors():
    s = surf(HALF)
    with pytest.raises(DomainError):
        intrinsic_distance(s, [0, 0], [2, 0])
    with pytest.raises(DomainError):
        distance_matrix(s, [[0, 0]])
