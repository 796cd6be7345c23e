import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convexcurv import DomainError, GraphSurface, NormScaled, PolygonalPath, QuadraticForm, Region
from convexcurv.geometry import (
    converged_path_length,
    lift,
    path_lift_length,
    path_samples,
    polygonal_path_eval,
    segment_lift_length,
)
from oracles import arclength_1d

coords = st.floats(-1.0, 1.0, allow_nan=False)


def surface(f, radius=10.0, center=None):
    n = f.dimension
    return GraphSurface.build(f, Region(np.zeros(n) if center is None else center, radius))


def test_path_eval_examples():
    assert np.allclose(polygonal_path_eval(PolygonalPath([[0, 0], [1, 0]]), 0.5), [0.5, 0])
    assert np.allclose(polygonal_path_eval(PolygonalPath([[0, 0], [1, 0], [1, 1]]), 0.5), [1, 0])
    assert np.allclose(polygonal_path_eval(PolygonalPath([[0, 0], [2, 0], [2, 2]]), 0.75), [2, 1])


def test_path_endpoints_and_domain():
    p = PolygonalPath([[0, 0], [3, 1], [2, 5], [-1, -1]])
    assert np.array_equal(p(0.0), p.start)
    assert np.array_equal(p(1.0), p.end)
    for t in (-0.01, 1.01, math.nan):
        with pytest.raises(DomainError):
            p(t)


def test_path_rejects_bad_input():
    with pytest.raises(DomainError):
        PolygonalPath([[0, 0]])
    with pytest.raises(DomainError):
        PolygonalPath([[0, 0], [math.inf, 1]])


def test_junctions_agree():
    p = PolygonalPath([[0, 0], [1, 0], [1, 1], [3, 1]])
    for i in range(1, p.k - 1):
        t = i / (p.k - 1)
        assert np.allclose(p(t), p.breakpoints[i])
        assert np.allclose(p(t - 1e-12), p(t + 1e-12), atol=1e-10)


def test_midpoint_insertion_keeps_the_curve():
    p = PolygonalPath([[0, 0], [2, 1], [-1, 3]])
    q = p.with_midpoints()
    for t in np.linspace(0, 1, 17):
        assert np.allclose(p(t), q(t))
    assert np.allclose(path_samples(p, 4), path_samples(q, 2))


@given(st.lists(st.tuples(coords, coords), min_size=2, max_size=6), st.floats(0, 1), st.floats(0, 1))
def test_path_eval_is_lipschitz_in_t(pts, t, s):
    p = PolygonalPath(np.array(pts))
    seg = np.linalg.norm(np.diff(p.breakpoints, axis=0), axis=1).max()
    assert np.linalg.norm(p(t) - p(s)) <= p.k * seg * abs(t - s) + 1e-12


def test_lift_examples():
    zero = surface(QuadraticForm.zero(2))
    lp = lift(zero, [1, 2])
    assert np.array_equal(lp.base, [1, 2]) and lp.height == 0
    assert lift(surface(QuadraticForm.half_norm_squared(2)), [2, 0]).height == 2
    assert lift(surface(NormScaled(1.0, 1)), [-3]).height == 3
    with pytest.raises(DomainError):
        lift(surface(NormScaled(1.0, 1), radius=1.0), [2.0])


def test_segment_length_examples():
    zero = surface(QuadraticForm.zero(2))
    for m in (1, 3, 64):
        assert segment_lift_length(zero, [0, 0], [3, 4], m) == pytest.approx(5, abs=1e-14)
    line = surface(QuadraticForm.affine([1.0]))
    for m in (1, 7, 128):
        assert segment_lift_length(line, [0], [1], m) == pytest.approx(math.sqrt(2), abs=1e-14)


def test_segment_length_matches_quadrature_oracle():
    parab = surface(QuadraticForm(np.array([[2.0]]), np.zeros(1), 0.0))
    exact = arclength_1d(lambda x: x * x, lambda x: 2 * x, 0.0, 1.0)
    assert exact == pytest.approx(1.478943, abs=1e-6)
    length, _ = converged_path_length(parab, PolygonalPath([[0.0], [1.0]]))
    assert length == pytest.approx(exact, rel=1e-7)
    assert length <= exact + 1e-12


def test_path_length_examples():
    zero = surface(QuadraticForm.zero(2))
    assert path_lift_length(zero, PolygonalPath([[0, 0], [1, 0], [1, 1]]), 5) == pytest.approx(2)
    line = surface(QuadraticForm.affine([1.0]))
    assert path_lift_length(line, PolygonalPath([[0], [0.5], [1]]), 3) == pytest.approx(math.sqrt(2))
    half = surface(QuadraticForm.half_norm_squared(2))
    exact = 2 * arclength_1d(lambda x: x * x / 2, lambda x: x, 0.0, 1.0)
    assert exact == pytest.approx(2.295587, abs=1e-6)
    got = path_lift_length(half, PolygonalPath([[-1, 0], [0, 0], [1, 0]]), 2048)
    assert got == pytest.approx(exact, abs=1e-6)
    with pytest.raises(DomainError):
        path_lift_length(surface(QuadraticForm.zero(2), radius=1.0), PolygonalPath([[0, 0], [2, 0]]), 4)


def test_one_dimensional_kink_is_exact():
    absx = surface(NormScaled(1.0, 1), radius=1.0)
    length, _ = converged_path_length(absx, PolygonalPath([[-1.0], [1.0]]))
    assert length == pytest.approx(2 * math.sqrt(2), abs=1e-12)


point2 = st.tuples(coords, coords).map(np.array)


@given(point2, point2, st.integers(1, 64))
def test_chord_refinement_and_bilipschitz(p, q, m):
    f = QuadraticForm(np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([0.3, -0.2]), 0.0)
    s = surface(f, radius=2.0)
    chord = np.linalg.norm(lift(s, p).as_vector() - lift(s, q).as_vector())
    l1 = segment_lift_length(s, p, q, 1)
    lm = segment_lift_length(s, p, q, m)
    l2m = segment_lift_length(s, p, q, 2 * m)
    assert l1 == pytest.approx(chord, rel=1e-12, abs=1e-15)
    assert lm >= chord - 1e-12
    assert l2m >= lm - 1e-12
    base = np.linalg.norm(p - q)
    assert base - 1e-12 <= lm <= s.bilipschitz * base + 1e-12
