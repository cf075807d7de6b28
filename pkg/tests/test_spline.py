import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanf.errors import InvalidInputError
from kanf.spline import (KnotGrid, SplineFunction, basis_eval, basis_with_derivative, fit_curve,
                         refine_grid, silu, spline_branch, spline_eval)

from oracles import basis_oracle, edge_oracle


def grids():
    return st.builds(KnotGrid, st.just(-1.0), st.just(1.0),
                     st.integers(1, 20), st.integers(0, 3))


def test_knot_grid_layout():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    assert g.basis_count == 8
    assert len(g.knots) == 5 + 2 * 3 + 1
    inside = g.knots[(g.knots >= -1) & (g.knots <= 1)]
    assert len(inside) == 6
    assert np.all(np.diff(g.knots) > 0)


@pytest.mark.parametrize("kwargs", [
    dict(domain_lo=1.0, domain_hi=1.0),
    dict(interior_count=0),
    dict(degree=-1),
    dict(domain_hi=math.inf),
])
def test_knot_grid_rejects_invalid(kwargs):
    with pytest.raises(InvalidInputError):
        KnotGrid(**kwargs)


def test_degree_zero_is_indicator():
    g = KnotGrid(0.0, 2.0, 2, 0)
    assert list(g.knots) == [0.0, 1.0, 2.0]
    assert basis_eval(g, 0.5).tolist() == [1.0, 0.0]
    assert basis_eval(g, 1.5).tolist() == [0.0, 1.0]


def test_cubic_matches_recursion_oracle():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    expected = basis_oracle(-1.0, 1.0, 5, 3, 0.3)
    np.testing.assert_allclose(basis_eval(g, 0.3), expected, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(grids(), st.floats(-1.0, 1.0))
def test_basis_matches_oracle_everywhere(g, x):
    np.testing.assert_allclose(basis_eval(g, x), basis_oracle(-1.0, 1.0, g.interior_count, g.degree, x),
                               atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(grids(), st.floats(-1.0, 1.0))
def test_partition_of_unity_and_local_support(g, x):
    b = basis_eval(g, x)
    assert b.shape == (g.basis_count,)
    assert abs(b.sum() - 1.0) < 1e-12
    assert np.count_nonzero(b) <= g.degree + 1
    assert np.all((b >= 0) & (b <= 1))


def test_batch_shape_and_endpoints():
    g = KnotGrid(-1.0, 1.0, 4, 2)
    xs = np.array([[-1.0, 1.0], [0.0, 0.25]])
    b = basis_eval(g, xs)
    assert b.shape == (2, 2, g.basis_count)
    np.testing.assert_allclose(b.sum(-1), 1.0, atol=1e-14)


def test_non_finite_input_rejected():
    g = KnotGrid()
    with pytest.raises(InvalidInputError):
        basis_eval(g, np.nan)
    with pytest.raises(InvalidInputError):
        spline_eval(SplineFunction.zeros(g), math.inf)


def test_derivative_matches_finite_difference():
    g = KnotGrid(-1.0, 1.0, 6, 3)
    xs = np.linspace(-0.97, 0.97, 41)
    _, db = basis_with_derivative(g, xs)
    step = 1e-6
    fd = (basis_eval(g, xs + step) - basis_eval(g, xs - step)) / (2 * step)
    np.testing.assert_allclose(db, fd, atol=1e-6)


def test_derivative_zero_outside_domain():
    g = KnotGrid(-1.0, 1.0, 3, 3)
    _, db = basis_with_derivative(g, np.array([-1.5, 2.0]))
    assert np.all(db == 0.0)


def test_zero_function_and_base_at_origin():
    g = KnotGrid()
    zero = SplineFunction.zeros(g)
    assert np.all(spline_eval(zero, np.linspace(-3, 3, 13)) == 0.0)
    base_only = SplineFunction(g, np.ones(g.basis_count), base_weight=1.0, spline_weight=0.0)
    assert spline_eval(base_only, 0.0) == 0.0


def test_eval_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    g = KnotGrid(-1.0, 1.0, 7, 3)
    c = rng.normal(size=g.basis_count)
    f = SplineFunction(g, c, base_weight=0.7, spline_weight=-1.3)
    for x in rng.uniform(-1.4, 1.4, 25):
        assert spline_eval(f, x) == pytest.approx(edge_oracle(-1, 1, 7, 3, c, 0.7, -1.3, x), abs=1e-12)


def test_spline_function_validates():
    g = KnotGrid()
    with pytest.raises(InvalidInputError):
        SplineFunction(g, np.zeros(3))
    with pytest.raises(InvalidInputError):
        SplineFunction(g, np.full(g.basis_count, np.nan))


def test_clamping_spline_branch_only():
    rng = np.random.default_rng(0)
    g = KnotGrid(-1.0, 1.0, 5, 3)
    f = SplineFunction(g, rng.normal(size=g.basis_count), base_weight=0.5)
    for x, edge in ((1.7, 1.0), (-2.5, -1.0)):
        assert spline_branch(f, x) == spline_branch(f, edge)
        assert spline_eval(f, x) == pytest.approx(spline_branch(f, edge) + 0.5 * float(silu(x)), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_linearity_in_coefficients(seed):
    rng = np.random.default_rng(seed)
    g = KnotGrid(-1.0, 1.0, int(rng.integers(1, 12)), int(rng.integers(0, 4)))
    c1, c2 = rng.normal(size=(2, g.basis_count))
    wb = float(rng.normal())
    xs = rng.uniform(-1, 1, 20)
    both = spline_eval(SplineFunction(g, c1 + c2, wb), xs)
    parts = spline_eval(SplineFunction(g, c1, wb), xs) + spline_eval(SplineFunction(g, c2, 0.0), xs)
    np.testing.assert_allclose(both, parts, atol=1e-12)


def test_fit_identity_line():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    xs = np.linspace(-1, 1, 200)
    f = SplineFunction(g, fit_curve(g, xs, xs))
    assert spline_eval(f, 0.5) == pytest.approx(0.5, abs=1e-6)


def test_fit_zero_target():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    xs = np.linspace(-1, 1, 50)
    assert np.max(np.abs(fit_curve(g, xs, np.zeros(50)))) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 20), st.integers(0, 3))
def test_fit_round_trip(seed, G, k):
    rng = np.random.default_rng(seed)
    g = KnotGrid(-1.0, 1.0, G, k)
    c = rng.normal(size=g.basis_count)
    xs = np.linspace(-1, 1, 10 * g.basis_count)
    ys = spline_branch(SplineFunction(g, c), xs)
    assert np.max(np.abs(fit_curve(g, xs, ys) - c)) < 1e-6


def test_fit_sine_residual():
    g = KnotGrid(-math.pi, math.pi, 10, 3)
    xs = np.linspace(-math.pi, math.pi, 400)
    f = SplineFunction(g, fit_curve(g, xs, np.sin(xs)))
    dense = np.linspace(-math.pi, math.pi, 2001)
    assert np.max(np.abs(spline_eval(f, dense) - np.sin(dense))) < 1e-3


def test_fit_errors():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    with pytest.raises(InvalidInputError):
        fit_curve(g, np.zeros(10), np.zeros(9))
    with pytest.raises(InvalidInputError):
        fit_curve(g, np.zeros(4), np.zeros(4))


def test_fit_rank_deficient_is_damped():
    g = KnotGrid(-1.0, 1.0, 5, 3)
    xs = np.zeros(20)
    c = fit_curve(g, xs, np.ones(20))
    assert np.all(np.isfinite(c))


def test_fit_multiple_columns():
    g = KnotGrid(-1.0, 1.0, 4, 3)
    xs = np.linspace(-1, 1, 80)
    ys = np.column_stack([xs, xs ** 2])
    c = fit_curve(g, xs, ys)
    assert c.shape == (g.basis_count, 2)
    np.testing.assert_allclose(c[:, 1], fit_curve(g, xs, xs ** 2))


def _sine_spline(G=5):
    g = KnotGrid(-1.0, 1.0, G, 3)
    xs = np.linspace(-1, 1, 300)
    return SplineFunction(g, fit_curve(g, xs, np.sin(3 * xs)), base_weight=0.25, spline_weight=0.8), xs


def test_refine_zero_spline():
    r = refine_grid(SplineFunction.zeros(KnotGrid()), 10)
    assert r.grid.interior_count == 10
    assert np.max(np.abs(r.coefficients)) < 1e-10


def test_refine_preserves_curve_and_weights():
    f, xs = _sine_spline()
    residual = np.max(np.abs(spline_branch(f, xs) - 0.8 * np.sin(3 * xs)))
    r = refine_grid(f, 10)
    assert (r.base_weight, r.spline_weight) == (0.25, 0.8)
    dense = np.linspace(-1, 1, 1000)
    assert np.max(np.abs(spline_eval(f, dense) - spline_eval(r, dense))) <= residual
    for end in (-1.0, 1.0):
        assert spline_eval(r, end) == pytest.approx(spline_eval(f, end), abs=1e-6)


def test_refine_requires_more_intervals():
    f, _ = _sine_spline()
    with pytest.raises(InvalidInputError):
        refine_grid(f, 5)
