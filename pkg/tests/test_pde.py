import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cspg.chebyshev import sample_points
from cspg.multiindex import WeightParams
from cspg.pde import (
    Calibration,
    DiffusionModel,
    EllipticityError,
    FemDiscretization,
    Functional,
    PsiFamily,
    beta0_sequence,
    beta0_upper,
    check_ellipticity,
    check_weighted_uea,
    coefficient_eval,
    default_model,
    discretization_for_tolerance,
    eval_functional,
    fem_solve,
    h1_error,
    lipschitz_bound,
    model_from_config,
    save_solution_csv,
    solve_functionals,
    stability_bound,
    sup_inf,
    thomas_spd,
    truncation_tail_bound,
)
from cspg.pipeline import rate_fit

PI = math.pi


def const(v):
    return lambda x: np.full_like(np.asarray(x, dtype=float), v)


def flat_model(functional=None, abar=1.0, count=0):
    return DiffusionModel(const(abar), PsiFamily(0.0, 3.0, count), const(1.0),
                          functional or Functional("average"), r=0.5, R=2.0, kappa=0.5)


def manufactured_model():
    # u = sin(pi x) solves -(a u')' = f for a = 2 + cos(2 pi x)
    def a(x):
        return 2 + np.cos(2 * PI * np.asarray(x, dtype=float))

    def f(x):
        x = np.asarray(x, dtype=float)
        return 2 * PI**2 * np.sin(2 * PI * x) * np.cos(PI * x) + a(x) * PI**2 * np.sin(PI * x)

    return DiffusionModel(a, PsiFamily(0.0, 3.0, 0), f, Functional("average"), r=0.5, R=4.0, kappa=0.5)


# --- coefficient and constants ----------------------------------------------


def test_coefficient_eval():
    m = default_model()
    assert coefficient_eval(m, np.zeros(5), 5, 0.3) == pytest.approx(2.0)
    assert coefficient_eval(m, np.ones(5), 0, 0.3) == pytest.approx(2.0)
    want = 2.0 + m.psis(1, 0.5)
    assert coefficient_eval(m, [1.0, 0.0, 0.0], 3, 0.5) == pytest.approx(want, abs=1e-15)
    assert want == pytest.approx(2.0 + m.psis.c, abs=1e-15)


def test_default_model_constants():
    m = default_model()
    assert sum(m.psis.sup_bound(j) for j in range(1, 65)) == pytest.approx(0.9, rel=1e-12)
    rep = check_ellipticity(m)
    assert rep.ok and rep.margin > 0


def test_beta0_examples():
    assert beta0_upper(flat_model(count=3), 2) == 0.0
    m = DiffusionModel(const(1.0), PsiFamily(0.3, 0.0, 2), const(1.0))
    assert beta0_upper(m, 1) == pytest.approx(0.3, abs=1e-6)


def test_beta0_decay_rate_of_default_model():
    b = beta0_sequence(default_model(count=32))
    assert np.all(np.diff(b) < 0)
    slope, r2 = rate_fit(list(zip(range(1, 33), b)))
    assert slope == pytest.approx(-3.0, abs=0.05) and r2 > 0.999


def test_sup_inf_refines():
    hi, lo = sup_inf(lambda x: np.sin(7 * PI * x))
    assert hi == pytest.approx(1.0, abs=1e-6) and lo == pytest.approx(-1.0, abs=1e-6)


def test_ellipticity_violation_reported():
    m = DiffusionModel(const(1.0), PsiFamily(0.9, 0.0, 2), const(1.0), r=0.1, R=3.0, kappa=0.5)
    rep = check_ellipticity(m)
    assert not rep.ok and "worst_x" in rep.details


def test_weighted_uea_zero_psi():
    m = DiffusionModel(const(2.0), PsiFamily(0.0, 3.0, 4), const(1.0), r=0.5, R=3.0)
    rep = check_weighted_uea(m, WeightParams.polynomial(1.0, 0.5), 0.5)
    assert rep.ok and rep.margin == pytest.approx(1.0)


def test_weighted_uea_default_passes():
    rep = check_weighted_uea(default_model(), WeightParams.polynomial(1.0, 0.5), 0.5)
    assert rep.ok and rep.margin > 0
    assert math.isfinite(rep.details["lp_sum"])


def test_weighted_uea_exponential_weights_fail():
    rep = check_weighted_uea(default_model(), WeightParams.exponential(2.0), 0.5)
    assert not rep.ok
    assert "violating_x" in rep.details and rep.details["violating_j_range"][0] >= 1


def test_weighted_uea_rejects_p():
    with pytest.raises(ValueError):
        check_weighted_uea(default_model(), WeightParams.polynomial(1.0, 0.5), 1.5)


# --- solver -----------------------------------------------------------------


@pytest.mark.parametrize("n", [8, 32, 128])
def test_constant_problem(n):
    # a = 1, f = 1: u = x(1-x)/2 is reproduced at the nodes by P1 elements
    m = flat_model()
    sol = fem_solve(m, [], FemDiscretization(n, 0))
    x = sol.grid()
    assert np.max(np.abs(sol.full_nodal() - x * (1 - x) / 2)) <= 1e-13
    assert abs(eval_functional(m, sol) - 1 / 12) <= 1 / (12 * n**2) + 1e-14
    pm = flat_model(Functional("point", 0.5))
    assert eval_functional(pm, fem_solve(pm, [], FemDiscretization(n, 0))) == pytest.approx(0.125, abs=1e-13)


def test_zero_solution_functional():
    m = DiffusionModel(const(1.0), PsiFamily(0.0, 3.0, 0), const(0.0))
    assert eval_functional(m, fem_solve(m, [], FemDiscretization(16, 0))) == 0.0


def test_point_functional_validation():
    with pytest.raises(ValueError):
        Functional("point", 1.5)
    with pytest.raises(ValueError):
        Functional("max")


def test_zero_parameter_equals_untruncated():
    m = default_model()
    a = fem_solve(m, np.zeros(64), FemDiscretization(64, 64))
    b = fem_solve(m, np.zeros(64), FemDiscretization(64, 0))
    assert np.array_equal(a.nodal, b.nodal)


def test_manufactured_rates():
    m = manufactured_model()
    hs, g_err, h1_err = [], [], []
    for k in range(4, 11):
        n = 2**k
        sol = fem_solve(m, [], FemDiscretization(n, 0))
        hs.append(1 / n)
        g_err.append(abs(eval_functional(m, sol) - 2 / PI))
        h1_err.append(h1_error(sol, lambda x: PI * np.cos(PI * x)))
    g_rate, _ = rate_fit(list(zip(hs, g_err)))
    h1_rate, _ = rate_fit(list(zip(hs, h1_err)))
    assert g_rate == pytest.approx(2.0, abs=0.2)
    assert h1_rate == pytest.approx(1.0, abs=0.1)


def test_nonpositive_coefficient_named():
    m = DiffusionModel(const(0.5), PsiFamily(1.0, 0.0, 1), const(1.0), r=0.1, R=2.0)
    with pytest.raises(EllipticityError, match="x ="):
        fem_solve(m, [-1.0], FemDiscretization(16, 1))


def test_parameter_outside_box():
    with pytest.raises(ValueError):
        fem_solve(default_model(), [1.5], FemDiscretization(8, 1))


def test_batched_matches_single_solves():
    m = default_model()
    disc = FemDiscretization(64, 8)
    Y = sample_points(4, 10, 8)
    batch = solve_functionals(m, Y, disc)
    single = [eval_functional(m, fem_solve(m, y, disc)) for y in Y]
    assert np.max(np.abs(batch - single)) <= 1e-14


def test_batched_point_functional():
    m = default_model(functional=Functional("point", 0.3))
    disc = FemDiscretization(50, 4)
    Y = sample_points(5, 6, 4)
    single = [eval_functional(m, fem_solve(m, y, disc)) for y in Y]
    assert np.max(np.abs(solve_functionals(m, Y, disc) - single)) <= 1e-14


def test_batching_is_bitwise_stable():
    m = default_model()
    disc = FemDiscretization(128, 16)
    Y = sample_points(6, 40, 16)
    whole = solve_functionals(m, Y, disc)
    parts = np.concatenate([solve_functionals(m, Y[a:a + 7], disc) for a in range(0, 40, 7)])
    assert np.array_equal(whole, parts)


def test_thomas_against_dense():
    rng = np.random.default_rng(2)
    n = 9
    off = rng.uniform(-1, 0, (3, n - 1))
    diag = 2.5 + rng.uniform(0, 1, (3, n))
    rhs = rng.standard_normal((3, n))
    x = thomas_spd(diag, off, rhs)
    for k in range(3):
        K = np.diag(diag[k]) + np.diag(off[k], 1) + np.diag(off[k], -1)
        assert np.allclose(K @ x[k], rhs[k], atol=1e-13)


def test_stability_bound_random_parameters():
    m = default_model()
    disc = FemDiscretization(64, 64)
    bound = stability_bound(m)
    for y in sample_points(8, 1000, 64)[::1]:
        assert fem_solve(m, y, disc).h1_seminorm <= bound


def test_lipschitz_bound_never_exceeded():
    m = default_model(count=16)
    L = lipschitz_bound(m)
    disc = FemDiscretization(64, 16)
    Y1, Y2 = sample_points(10, 200, 16), sample_points(11, 200, 16)
    g1, g2 = solve_functionals(m, Y1, disc), solve_functionals(m, Y2, disc)
    ratio = np.abs(g1 - g2) / np.max(np.abs(Y1 - Y2), axis=1)
    assert np.all(ratio <= L)


def test_solution_csv(tmp_path):
    sol = fem_solve(flat_model(), [], FemDiscretization(4, 0))
    path = tmp_path / "u.csv"
    save_solution_csv(path, sol)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,u_h" and len(lines) == 6


# --- truncation -------------------------------------------------------------


def test_tail_bound_zero_tail():
    assert truncation_tail_bound([0.5, 0.1, 0.0, 0.0], 2, 0.5) == 0.0


def test_tail_bound_dominates_cubic_tail():
    b = np.arange(1, 200_001, dtype=float) ** -3.0
    tails = np.cumsum(b[::-1])[::-1]
    for J in range(1, 101):
        assert tails[J] <= truncation_tail_bound(b, J, 0.5)
    assert truncation_tail_bound(b, 10, 0.5) / truncation_tail_bound(b, 20, 0.5) == pytest.approx(2.0)


def test_tail_bound_rejects_p0():
    with pytest.raises(ValueError):
        truncation_tail_bound([0.1], 1, 1.0)


def test_truncation_error_rate_on_default_model():
    m = default_model()
    Y = sample_points(3, 50, 64)
    ref = solve_functionals(m, Y, FemDiscretization(256, 64))
    pairs = [(J, float(np.max(np.abs(solve_functionals(m, Y, FemDiscretization(256, J)) - ref)))) for J in (4, 8, 16)]
    p0 = 0.5
    slope, _ = rate_fit(pairs)
    assert -slope >= 2 * (1 / p0 - 1) - 0.2


# --- config / tolerance mapping --------------------------------------------


def test_model_from_config_defaults_match():
    m = model_from_config({"psi": {"tau": 3.0, "count": 64}})
    assert m.psis.c == pytest.approx(default_model().psis.c, rel=1e-12)


def test_model_from_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="colour"):
        model_from_config({"colour": 1})
    with pytest.raises(ValueError, match="sigma"):
        model_from_config({"psi": {"sigma": 1}})


def test_model_from_config_cosine():
    m = model_from_config({"abar": {"kind": "cosine", "mean": 3.0, "amp": 0.5}, "functional": {"kind": "point", "x0": 0.25}})
    assert float(m.abar(np.array(0.0))) == pytest.approx(3.5)
    assert m.functional.kind == "point"


def test_discretization_for_tolerance():
    m = default_model()
    d = discretization_for_tolerance(1e-4, m, Calibration(c_h=1.0, c_B=1.0, p0=0.5))
    assert d.n_cells == 100 and d.B == 64
    d = discretization_for_tolerance(0.25, m, Calibration(c_h=1.0, c_B=1.0, p0=0.5))
    assert d.n_cells == 2 and d.B == 4
    with pytest.raises(ValueError):
        discretization_for_tolerance(0.0, m)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_stiffness_spd_under_uea(y):
    # a positive solution for f = 1 follows from the discrete maximum principle
    sol = fem_solve(default_model(count=8), y, FemDiscretization(32, 8))
    assert np.all(sol.nodal > 0)
