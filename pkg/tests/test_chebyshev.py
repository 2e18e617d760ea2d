import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cspg.chebyshev import (
    QUAD_BUDGET,
    DomainError,
    ParamPoint,
    cheb1d,
    cheb_table,
    default_quad_order,
    load_points_csv,
    quad_rule,
    reference_coefficient,
    reference_coefficients,
    sample_measure,
    sample_points,
    sample_stream,
    save_points_csv,
    tensor_cheb,
    tensor_cheb_matrix,
)
from cspg.multiindex import MultiIndex


def trig_cheb(j, t):
    return 1.0 if j == 0 else math.sqrt(2) * math.cos(j * math.acos(t))


# --- univariate -------------------------------------------------------------


def test_cheb1d_values():
    assert cheb1d(0, 0.37) == 1.0
    assert cheb1d(1, 1.0) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert cheb1d(2, 0.5) == pytest.approx(-math.sqrt(2) / 2, abs=1e-15)


def test_cheb1d_domain():
    with pytest.raises(DomainError):
        cheb1d(3, 1.0000001)
    with pytest.raises(DomainError):
        cheb1d(1, np.array([0.0, -2.0]))
    with pytest.raises(ValueError):
        cheb1d(-1, 0.0)


def test_recurrence_matches_trig_formula():
    rng = np.random.default_rng(0)
    js = rng.integers(0, 51, 10_000)
    ts = rng.uniform(-1, 1, 10_000)
    table = cheb_table(50, ts)
    got = table[np.arange(ts.size), js]
    want = np.array([trig_cheb(j, t) for j, t in zip(js, ts)])
    assert np.max(np.abs(got - want)) <= 1e-13


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 60), st.floats(-1, 1))
def test_univariate_sup_norm(j, t):
    assert abs(cheb1d(j, t)) <= (1.0 if j == 0 else math.sqrt(2)) + 1e-12


# --- tensor products --------------------------------------------------------


def test_tensor_cheb_examples():
    assert tensor_cheb(MultiIndex.zero(), ParamPoint((0.3,))) == 1.0
    nu = MultiIndex.from_dense([1, 0, 2])
    assert tensor_cheb(nu, ParamPoint((1.0, 0.2, 0.5))) == pytest.approx(-1.0, abs=1e-15)


def test_tensor_cheb_needs_enough_coordinates():
    with pytest.raises(ValueError):
        tensor_cheb(MultiIndex([(3, 1)]), (0.1, 0.2))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(0, 6), min_size=1, max_size=5),
    st.lists(st.floats(-1, 1), min_size=5, max_size=5),
)
def test_tensor_cheb_sup_bound(dense, y):
    nu = MultiIndex.from_dense(dense)
    assert abs(tensor_cheb(nu, y)) <= 2 ** (nu.norm0 / 2) * (1 + 1e-12)


def test_matrix_matches_pointwise():
    nus = [MultiIndex.from_dense(d) for d in ([0], [2], [0, 1], [1, 3], [0, 0, 4])]
    Y = sample_points(5, 7, 3)
    M = tensor_cheb_matrix(nus, Y)
    for l in range(7):
        for k, nu in enumerate(nus):
            assert M[l, k] == pytest.approx(tensor_cheb(nu, Y[l]), abs=1e-14)
    with pytest.raises(ValueError):
        tensor_cheb_matrix(nus, Y[:, :2])


def test_param_point_validation():
    assert ParamPoint((0.5, -1.0)).dims == 2
    with pytest.raises(DomainError):
        ParamPoint((1.5,))


# --- sampling ---------------------------------------------------------------


def test_sample_moments():
    Y = sample_points(2024, 100_000, 1)[:, 0]
    t1 = math.sqrt(2) * Y
    sigma = 1 / math.sqrt(Y.size)
    assert abs(t1.mean()) <= 3 * sigma
    # Var(T_1^2) = E[T_1^4] - 1 = 1/2 for the arcsine law
    assert abs((t1**2).mean() - 1) <= 3 * math.sqrt(0.5) * sigma


def test_sample_ks_against_arcsine():
    Y = sample_points(7, 5000, 2)
    for j in range(2):
        u = np.arccos(Y[:, j]) / np.pi
        res = stats.kstest(u, "uniform")
        assert res.pvalue > 0.01


def test_sample_prefix_and_offset_consistency():
    full = sample_points(3, 20, 4)
    assert np.array_equal(full[:5], sample_points(3, 5, 4))
    assert np.array_equal(full[12:], sample_points(3, 8, 4, start=12))


def test_sample_measure_in_box():
    p = sample_measure(sample_stream(1, 0), 6)
    assert p.dims == 6 and all(-1 <= c <= 1 for c in p.coords)
    with pytest.raises(ValueError):
        sample_measure(sample_stream(1, 0), 0)


def test_monte_carlo_gram_band():
    nus = [MultiIndex.from_dense(d) for d in ([0], [1], [0, 1], [2, 1])]
    for m in (400, 1600):
        Phi = tensor_cheb_matrix(nus, sample_points(11, m, 2))
        G = Phi.T @ Phi / m
        # each entry is a mean of terms bounded by 2**(||nu||_0 + ||mu||_0)/2 <= 4
        assert np.max(np.abs(G - np.eye(4))) <= 3 * 4 / math.sqrt(m)


def test_points_csv_round_trip(tmp_path):
    Y = sample_points(9, 6, 3)
    path = tmp_path / "pts.csv"
    save_points_csv(path, Y)
    assert np.array_equal(load_points_csv(path), Y)


# --- quadrature -------------------------------------------------------------


def test_quad_rule_basics():
    r = quad_rule(1)
    assert r.nodes.tolist() == [0.0] and r.weights.tolist() == [1.0]
    r = quad_rule(9)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(r.nodes) < 0) and np.all(np.abs(r.nodes) < 1)
    with pytest.raises(ValueError):
        quad_rule(0)


def test_quad_second_moment():
    r = quad_rule(4)
    assert abs(r.weights @ r.nodes**2 - 0.5) <= 1e-14


@pytest.mark.parametrize("n", [5, 16, 32])
def test_quad_orthonormality_whenever_exact(n):
    r = quad_rule(n)
    T = cheb_table(2 * n, r.nodes)
    gram = T.T @ (T * r.weights[:, None])
    for j in range(2 * n):
        for k in range(2 * n):
            if j + k + 1 <= 2 * n:
                assert abs(gram[j, k] - (j == k)) <= 1e-12


def test_default_quad_order():
    assert default_quad_order(5) == 18


def test_reference_coefficient_of_basis_function():
    mu = MultiIndex.from_dense([2, 0, 1])

    def F(P):
        return tensor_cheb_matrix([mu], P)[:, 0]

    assert abs(reference_coefficient(F, mu, 6, 3) - 1) <= 1e-12
    for other in ([0], [2], [2, 0, 2], [1, 1, 1]):
        assert abs(reference_coefficient(F, MultiIndex.from_dense(other), 6, 3)) <= 1e-12


def test_reference_coefficient_self_convergence():
    def F(P):
        return 1.0 / (2.0 + P[:, 0])

    nus = [MultiIndex.from_dense([k]) for k in range(12)]
    a = reference_coefficients(F, nus, 64, 1)
    b = reference_coefficients(F, nus, 128, 1)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_reference_coefficient_pointwise_callable():
    val = reference_coefficient(lambda p: p.coords[0] ** 2, MultiIndex.zero(), 4, 1, vectorized=False)
    assert val == pytest.approx(0.5, abs=1e-14)


def test_reference_coefficients_per_dimension_orders():
    def F(P):
        return P[:, 0] * P[:, 1] ** 2

    # y1 y2^2 = (T_1/sqrt2)(1/2 + T_2/(2 sqrt2))
    nus = [MultiIndex.from_dense([1]), MultiIndex.from_dense([1, 2])]
    got = reference_coefficients(F, nus, [2, 3], 2)
    assert got == pytest.approx([1 / (2 * math.sqrt(2)), 0.25], abs=1e-14)


def test_quadrature_budget():
    n = int(round(QUAD_BUDGET ** (1 / 3))) + 2
    with pytest.raises(ValueError, match="Monte Carlo"):
        reference_coefficients(lambda P: P[:, 0], [MultiIndex.zero()], n, 3)
    with pytest.raises(ValueError):
        reference_coefficients(lambda P: P[:, 0], [MultiIndex([(4, 1)])], 3, 3)
