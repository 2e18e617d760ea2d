"""Seeded property suites behind ``cspg verify``.

Every suite returns a list of :class:`Check` records; a suite passes when all
of its checks pass. Seeds are fixed so that reruns print the same numbers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import chebyshev as cheb
from .csrecovery import (
    RecoveryParams,
    best_weighted_s_term_oracle,
    solve_weighted_bpdn,
    stechkin_bound,
    wrip_constant,
)
from .multiindex import (
    WeightParams,
    active_dimension,
    corollary_bound,
    enumerate_index_set,
    gamma_bound,
    gamma_exact,
    index_set_size_bound,
    omega,
)
from .pde import DiffusionModel, FemDiscretization, Functional, PsiFamily, eval_functional, fem_solve
from .pipeline import random_weighted_sparse, rate_fit, sample_count


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{tag}] {self.name}: {self.value}{extra}"


# --- chebyshev --------------------------------------------------------------


def quadrature_gram_error(n: int = 32, kmax: int = 20) -> float:
    rule = cheb.quad_rule(n)
    T = cheb.cheb_table(kmax, rule.nodes)
    gram = T.T @ (T * rule.weights[:, None])
    return float(np.max(np.abs(gram - np.eye(kmax + 1))))


def suite_chebyshev() -> list[Check]:
    err = quadrature_gram_error()
    out = [Check("gauss-chebyshev n=32 gram, j,k <= 20", err <= 1e-12, f"{err:.2e}", "tol 1e-12")]
    rng = np.random.default_rng(0)
    ts = rng.uniform(-1, 1, 5000)
    js = rng.integers(0, 51, 5000)
    T = cheb.cheb_table(50, ts)[np.arange(ts.size), js]
    trig = np.where(js == 0, 1.0, math.sqrt(2) * np.cos(js * np.arccos(ts)))
    dev = float(np.max(np.abs(T - trig)))
    out.append(Check("recurrence vs cos(j arccos t)", dev <= 1e-13, f"{dev:.2e}", "tol 1e-13"))
    peak = float(np.max(np.abs(cheb.cheb_table(50, ts)[:, 1:])))
    out.append(Check("sup |T_j| <= sqrt 2", peak <= math.sqrt(2) + 1e-12, f"{peak:.6f}"))
    return out


# --- stechkin ---------------------------------------------------------------


def stechkin_instance(rng: np.random.Generator, N: int = 12):
    w = rng.uniform(1.0, 2.0, N)
    x = rng.standard_normal(N) * rng.uniform(0, 1, N) ** 3
    x[rng.random(N) < 0.2] = 0.0
    s = 2 * float(np.max(w)) ** 2 * rng.uniform(1.0, 4.0)
    return x, w, s


def stechkin_holds(x, w, s, p: float = 0.5, q: float = 1.0) -> tuple[bool, float]:
    _, sigma = best_weighted_s_term_oracle(x, w, s, q)
    bound = stechkin_bound(x, w, p, q, s)
    return sigma <= bound + 1e-12 * max(bound, 1.0), sigma / bound if bound > 0 else 0.0


def suite_stechkin(trials: int = 1000, seed: int = 2024) -> list[Check]:
    rng = np.random.default_rng(seed)
    ok, worst = 0, 0.0
    for _ in range(trials):
        held, ratio = stechkin_holds(*stechkin_instance(rng))
        ok += held
        worst = max(worst, ratio)
    return [Check(f"weighted stechkin p=1/2 q=1 on {trials} instances", ok == trials, f"{ok}/{trials}",
                  f"worst sigma/bound {worst:.3f}")]


# --- wrip -------------------------------------------------------------------

WRIP_WEIGHTS = WeightParams.constant(1.2, max_dim=11)
WRIP_S = 6
WRIP_M = (20, 80, 320)


def wrip_trial(k: int) -> list[float]:
    iset = enumerate_index_set(WRIP_S, WRIP_WEIGHTS)
    om = iset.omegas()
    Y = cheb.sample_points(1000 + k, WRIP_M[-1], iset.max_dim)
    Phi = cheb.tensor_cheb_matrix(iset, Y)
    return [wrip_constant(Phi[:m] / math.sqrt(m), om, WRIP_S) for m in WRIP_M]


def suite_wrip(trials: int = 100) -> list[Check]:
    mono, small = 0, 0
    for k in range(trials):
        d = wrip_trial(k)
        # exhaustive values carry roundoff; allow it in the ordering
        mono += all(b <= a + 1e-12 for a, b in zip(d, d[1:]))
        small += d[-1] < 1 / 3
    need = math.ceil(0.95 * trials)
    return [
        Check("delta nonincreasing over m = 20, 80, 320", mono >= need, f"{mono}/{trials}", f"need {need}"),
        Check("delta < 1/3 at m = 320", small >= need, f"{small}/{trials}", f"need {need}"),
    ]


# --- counting ---------------------------------------------------------------


def counting_configs() -> list[tuple[WeightParams, float]]:
    """Grid of (weights, s): explicit weight vectors from {1.5, 2, 4} plus the three families.

    Only configurations whose active dimension is at most 6 are kept.
    """
    out = []
    for d in range(1, 7):
        for v in itertools.product([1.5, 2.0, 4.0], repeat=d):
            if list(v) != sorted(v):
                continue
            for t in (2, 16, 128, 1024):
                out.append((WeightParams.explicit(v), 2.0 * t))
    families = [WeightParams.constant(b, d) for b in (1.5, 2.0, 4.0) for d in (2, 4, 6)]
    families += [WeightParams.exponential(b) for b in (1.5, 2.0, 4.0)]
    families += [WeightParams.polynomial(c, a) for c in (1.5, 2.0, 4.0) for a in (0.5, 1.0, 2.0)]
    for w in families:
        for t in (2, 16, 128, 1024):
            if active_dimension(2.0 * t, w) <= 6:
                out.append((w, 2.0 * t))
    return out


def counting_chain(w: WeightParams, s: float) -> tuple[int, float, float | None]:
    """Exact size, subset-sum bound and (when it applies) the closed form."""
    exact = len(enumerate_index_set(s, w))
    d = active_dimension(s, w)
    v = [w.v(j) for j in range(1, d + 1)]
    subset = index_set_size_bound(s / 2, v) if v else 1.0
    try:
        cor = corollary_bound(w, s) if w.kind != "explicit" else None
    except ValueError:
        cor = None
    return exact, subset, cor


def gamma_instances(n: int = 1000, seed: int = 7):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(1, 6))
        b = rng.uniform(0.2, 3.0, k)
        L = float(rng.uniform(0.5, 3.0) * b.sum())
        yield L, b


def suite_counting() -> list[Check]:
    configs = counting_configs()
    bad_subset, bad_cor, with_cor = [], [], 0
    for w, s in configs:
        exact, subset, cor = counting_chain(w, s)
        if exact > subset * (1 + 1e-12):
            bad_subset.append((w.kind, s))
        if cor is not None:
            with_cor += 1
            if subset > cor * (1 + 1e-12):
                bad_cor.append((w.kind, s))
    g_bad = sum(gamma_exact(L, b) > gamma_bound(L, b) * (1 + 1e-12) for L, b in gamma_instances())
    return [
        Check("exact <= subset-sum bound", not bad_subset, f"{len(configs) - len(bad_subset)}/{len(configs)}"),
        Check("subset-sum bound <= closed form", not bad_cor, f"{with_cor - len(bad_cor)}/{with_cor}"),
        Check("gamma exact <= volume bound", g_bad == 0, f"{1000 - g_bad}/1000"),
    ]


# --- fem --------------------------------------------------------------------


def manufactured_model() -> tuple[DiffusionModel, float]:
    """``a = 2 + cos 2 pi x`` and ``u = sin pi x``, so ``int u = 2 / pi``."""
    pi = math.pi

    def a(x):
        return 2 + np.cos(2 * pi * np.asarray(x, dtype=float))

    def f(x):
        x = np.asarray(x, dtype=float)
        return 2 * pi**2 * np.sin(2 * pi * x) * np.cos(pi * x) + a(x) * pi**2 * np.sin(pi * x)

    return DiffusionModel(a, PsiFamily(0.0, 3.0, 0), f, Functional("average"), r=0.5, R=4.0), 2 / pi


def fem_functional_rate(levels=range(4, 11)) -> tuple[float, float, list]:
    model, exact = manufactured_model()
    pairs = []
    for k in levels:
        sol = fem_solve(model, [], FemDiscretization(2**k, 0))
        pairs.append((2.0**-k, abs(eval_functional(model, sol) - exact)))
    slope, r2 = rate_fit(pairs)
    return slope, r2, pairs


def suite_fem() -> list[Check]:
    slope, r2, _ = fem_functional_rate()
    return [Check("functional error rate over h = 2^-4 .. 2^-10", abs(slope - 2.0) <= 0.2, f"{slope:.3f}",
                  f"target 2.0 +- 0.2, r2 {r2:.4f}")]


# --- recovery ---------------------------------------------------------------

RECOVERY_WEIGHTS = WeightParams.exponential(1.1)
RECOVERY_S = 20
RECOVERY_N = 200
RECOVERY_C = 0.008


def recovery_setup():
    nus = list(enumerate_index_set(128, RECOVERY_WEIGHTS))[:RECOVERY_N]
    om = np.array([omega(nu, RECOVERY_WEIGHTS) for nu in nus])
    return nus, om


def recovery_trials(C: float, trials: int, seed: int, rtol: float = 1e-6) -> list[float]:
    """Relative errors of ``tau = 0`` recovery; trial ``k`` uses point seed ``seed + k``."""
    nus, om = recovery_setup()
    m = sample_count(C, RECOVERY_S, len(nus))
    dims = max(nu.max_dim for nu in nus)
    errs = []
    for k in range(trials):
        x0 = random_weighted_sparse(cheb.sample_stream(seed, k), om, RECOVERY_S)
        Phi = cheb.tensor_cheb_matrix(nus, cheb.sample_points(seed + k, m, dims))
        res = solve_weighted_bpdn(Phi, Phi @ x0, om, RecoveryParams(tau=0.0, tol=1e-10))
        errs.append(float(np.linalg.norm(res.values - x0) / np.linalg.norm(x0)))
    return errs


def suite_recovery(trials: int = 100, seed: int = 31337) -> list[Check]:
    errs = recovery_trials(RECOVERY_C, trials, seed)
    ok = sum(e <= 1e-6 for e in errs)
    need = math.ceil(0.95 * trials)
    m = sample_count(RECOVERY_C, RECOVERY_S, RECOVERY_N)
    return [Check(f"exact recovery s={RECOVERY_S}, N={RECOVERY_N}, m={m}", ok >= need, f"{ok}/{trials}",
                  f"need {need}")]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "chebyshev": suite_chebyshev,
    "stechkin": suite_stechkin,
    "wrip": suite_wrip,
    "counting": suite_counting,
    "fem": suite_fem,
    "recovery": suite_recovery,
}
