"""End-to-end sparse Chebyshev approximation of a parametric PDE functional.

Steps: draw ``m`` parameters from the arcsine product measure, solve the
finite-element problem at each, fit Chebyshev coefficients on the weighted
index set by weighted l1 minimization (or thresholding), then estimate the
resulting errors on fresh samples.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import chebyshev as cheb
from .csrecovery import (
    InfeasibleError,
    RecoveryError,
    RecoveryParams,
    _residual_floor,
    save_binary,
    solve_weighted_bpdn,
    solve_weighted_iht,
)
from .multiindex import IndexSet, MultiIndex, WeightParams, enumerate_index_set
from .pde import (
    Calibration,
    DiffusionModel,
    FemDiscretization,
    beta0_sequence,
    discretization_for_tolerance,
    functional_norm_bound,
    rhs_dual_bound,
    solve_functionals,
    sup_inf,
)

CHUNK = 128  # rows per solve batch; fixed so that results never depend on workers
TAU_FLOOR_MARGIN = 1.1


def sample_count(C: float, s: float, N: int) -> int:
    """``ceil(C s log(s)**3 log(N))`` with ``s`` and ``N`` floored at 2."""
    return max(1, math.ceil(C * s * math.log(max(s, 2)) ** 3 * math.log(max(N, 2))))


@dataclass
class ExperimentPlan:
    s: float
    weights: WeightParams
    oversample_C: float
    m: int
    index_set: IndexSet
    epsilon: float
    seed: int
    sample_dims: int
    disc: FemDiscretization
    warnings: list[str] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.index_set)

    @property
    def tau(self) -> float:
        return 2.0 * math.sqrt(self.m) * self.epsilon

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "weights": self.weights.to_dict(),
            "oversample_C": self.oversample_C,
            "m": self.m,
            "N": self.N,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "sample_dims": self.sample_dims,
            "n_cells": self.disc.n_cells,
            "B": self.disc.B,
            "tau": self.tau,
            "index_set_sha256": self.index_set.digest(),
            "warnings": list(self.warnings),
        }


def plan_experiment(
    s: float,
    w: WeightParams,
    oversample_C: float,
    epsilon: float,
    seed: int,
    model: DiffusionModel | None = None,
    calibration: Calibration = Calibration(),
    m: int | None = None,
    disc: FemDiscretization | None = None,
) -> ExperimentPlan:
    """Fix index set, sample count, discretization and sampling dimension.

    ``m`` and ``disc`` override the formula-based choices when given.
    """
    if s < 2:
        raise ValueError("s must be >= 2")
    iset = enumerate_index_set(s, w)
    if len(iset) == 0:
        raise ValueError("index set is empty")
    if disc is None:
        if model is None:
            raise ValueError("need a model or an explicit discretization")
        disc = discretization_for_tolerance(epsilon, model, calibration)
    m = sample_count(oversample_C, s, len(iset)) if m is None else int(m)
    if m < 1:
        raise ValueError("need m >= 1")
    warnings = []
    if m >= len(iset):
        warnings.append(f"m = {m} >= N = {len(iset)}: not in the compressive regime")
    dims = max(disc.B, iset.max_dim, 1)
    return ExperimentPlan(s, w, oversample_C, m, iset, epsilon, int(seed), dims, disc, warnings)


@dataclass
class ChebyshevSurrogate:
    index_set: IndexSet
    coeffs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def evaluate(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(Y)
        d = self.index_set.max_dim
        Phi = cheb.tensor_cheb_matrix(self.index_set, Y[:, :d] if d else Y[:, :1])
        out = np.zeros(Phi.shape[0])
        for k in np.flatnonzero(self.coeffs):
            out += Phi[:, k] * self.coeffs[k]
        return out

    def sup_bound(self) -> float:
        """``sum |g_nu| 2**(||nu||_0/2)``, a bound on ``sup |F_hat|``."""
        return float(np.abs(self.coeffs) @ self.index_set.linf_norms())

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.coeffs, dtype="<f8").tobytes()).hexdigest()

    def save(self, path: str | Path) -> None:
        head = {
            "dims": self.index_set.max_dim,
            "N": len(self.index_set),
            "seed": self.provenance.get("plan", {}).get("seed"),
            "index_set_sha256": self.index_set.digest(),
        }
        save_binary(path, self.coeffs, head)


def _parallel_rows(fn: Callable[[int, int], np.ndarray], n: int, workers: int) -> np.ndarray:
    """Apply ``fn(start, stop)`` over fixed chunks and concatenate in order."""
    bounds = [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]
    if workers <= 1 or len(bounds) <= 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda ab: fn(*ab), bounds))
    return np.concatenate(parts) if parts else np.empty(0)


def sample_functionals(model: DiffusionModel, Y: np.ndarray, disc: FemDiscretization, workers: int = 1) -> np.ndarray:
    """Functional values for every row of ``Y``; failures name the sample index."""

    def block(a: int, b: int) -> np.ndarray:
        try:
            return solve_functionals(model, Y[a:b], disc)
        except Exception as exc:  # locate the failing row
            for i in range(a, b):
                try:
                    solve_functionals(model, Y[i : i + 1], disc)
                except Exception as inner:
                    raise type(inner)(f"sample {i}: {inner}") from exc
            raise

    return _parallel_rows(block, Y.shape[0], workers)


def draw_samples(seed: int, m: int, dims: int, workers: int = 1) -> np.ndarray:
    def block(a: int, b: int) -> np.ndarray:
        return cheb.sample_points(seed, b - a, dims, start=a)

    return _parallel_rows(block, m, workers).reshape(m, dims)


def run_cspg(
    model: DiffusionModel | None,
    plan: ExperimentPlan,
    recovery: str = "bpdn",
    workers: int = 1,
    F: Callable[[np.ndarray], np.ndarray] | None = None,
    params: RecoveryParams | None = None,
) -> ChebyshevSurrogate:
    """Run the sample / solve / recover loop for one plan.

    ``F`` replaces the PDE solves by a given vectorized function of the
    parameters (used to plant known expansions).
    """
    t0 = time.perf_counter()
    Y = draw_samples(plan.seed, plan.m, plan.sample_dims, workers)
    if F is not None:
        b = np.asarray(F(Y), dtype=float)
    else:
        if model is None:
            raise ValueError("need a model or F")
        b = sample_functionals(model, Y, plan.disc, workers)
    t_solve = time.perf_counter()
    Phi = cheb.tensor_cheb_matrix(plan.index_set, Y)
    omega = plan.index_set.omegas()
    stats: dict = {"recovery": recovery}
    if recovery == "bpdn":
        base = params or RecoveryParams()
        tau = plan.tau
        floor = _residual_floor(Phi, b)
        if tau < TAU_FLOOR_MARGIN * floor:
            # a radius at (or under) the least-squares floor leaves a near-degenerate feasible set
            stats["tau_requested"] = tau
            stats["ls_residual"] = floor
            tau = TAU_FLOOR_MARGIN * floor
            stats["tau_inflated"] = True
        rp = replace(base, tau=tau)
        res = solve_weighted_bpdn(Phi, b, omega, rp)
        stats.update(tau=tau, iterations=res.iterations, residual=res.residual, objective=res.objective,
                     dual_bound=res.dual_bound)
    elif recovery == "iht":
        res = solve_weighted_iht(Phi, b, omega, plan.s)
        stats.update(iterations=res.iterations, residual=res.residual)
    else:
        raise ValueError(f"unknown recovery method {recovery!r}")
    t_end = time.perf_counter()
    stats.update(solve_seconds=t_solve - t0, recovery_seconds=t_end - t_solve)
    return ChebyshevSurrogate(plan.index_set, res.values.copy(), {"plan": plan.to_dict(), "stats": stats})


@dataclass
class ErrorReport:
    l2_estimate: float
    l2_stderr: float
    linf_estimate: float
    n_test: int
    reference: str
    surrogate_sup_bound: float = math.nan

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def jackknife_rms(err: np.ndarray) -> tuple[float, float]:
    """Root mean square of ``err`` and its jackknife standard error."""
    e2 = np.asarray(err, dtype=float) ** 2
    n = e2.size
    rms = math.sqrt(float(e2.mean()))
    if n < 2:
        return rms, math.nan
    loo = np.sqrt((e2.sum() - e2) / (n - 1))
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return rms, se


def estimate_errors(
    surrogate: ChebyshevSurrogate,
    model: DiffusionModel | None,
    n_test: int,
    seed2: int,
    h_ref: float | None = None,
    workers: int = 1,
    F_ref: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ErrorReport:
    """Monte Carlo L2 and sampled-max errors against fine reference solves.

    The reference keeps every coefficient function of the model and uses
    ``h_ref`` (default: an eighth of the planning mesh width).
    """
    plan = surrogate.provenance.get("plan", {})
    if F_ref is None:
        if model is None:
            raise ValueError("need a model or F_ref")
        n_plan = int(plan.get("n_cells", 64))
        n_ref = 8 * n_plan if h_ref is None else max(2, int(round(1.0 / h_ref)))
        if n_ref < 4 * n_plan:
            raise ValueError("reference mesh must be at least 4x finer than the planning mesh")
        dims = max(model.count, surrogate.index_set.max_dim, 1)
    else:
        dims = max(int(plan.get("sample_dims", 1)), surrogate.index_set.max_dim, 1)
    Y = draw_samples(seed2, n_test, dims, workers)
    if F_ref is None:
        ref = sample_functionals(model, Y, FemDiscretization(n_ref, model.count), workers)
        kind = f"fem n_cells={n_ref}"
    else:
        ref = np.asarray(F_ref(Y), dtype=float)
        kind = "function"
    err = surrogate.evaluate(Y) - ref
    rms, se = jackknife_rms(err)
    return ErrorReport(rms, se, float(np.max(np.abs(err))), n_test, kind, surrogate.sup_bound())


def reference_coefficients_lowdim(
    model: DiffusionModel,
    index_set: IndexSet | Sequence[MultiIndex],
    n_quad=None,
    disc: FemDiscretization | None = None,
    max_dims: int = 6,
) -> np.ndarray:
    """Tensor Gauss-Chebyshev projections of ``y -> G(u_h(y))`` for a low-dimensional set.

    The model is truncated to the set's active dimension, so the integrand
    depends on exactly those coordinates. ``n_quad`` defaults to
    ``2 * max degree + 8`` per dimension.
    """
    nus = list(index_set)
    d = max((nu.max_dim for nu in nus), default=0)
    if d > max_dims:
        raise ValueError(f"active dimension {d} exceeds the tensor-quadrature limit {max_dims}")
    d = max(d, 1)
    if n_quad is None:
        maxdeg = [0] * d
        for nu in nus:
            for j, k in nu.pairs:
                maxdeg[j - 1] = max(maxdeg[j - 1], k)
        n_quad = [cheb.default_quad_order(k) for k in maxdeg]
    disc = disc or FemDiscretization(512, d)
    disc = FemDiscretization(disc.n_cells, min(d, model.count))
    sub = model.truncated(d)
    return cheb.reference_coefficients(lambda P: solve_functionals(sub, P, disc), nus, n_quad, d)


def check_delta_admissible(rho: Sequence[float], model: DiffusionModel | np.ndarray, delta: float) -> bool:
    """``sum_j rho_j beta_j <= 1 - delta`` with the computable ``beta_j`` upper bounds."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    beta = beta0_sequence(model) if isinstance(model, DiffusionModel) else np.asarray(model, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.size < beta.size:
        rho = np.concatenate([rho, np.ones(beta.size - rho.size)])
    return bool(float(rho[: beta.size] @ beta) <= 1 - delta)


def admissible_radii(beta: np.ndarray, delta: float, dims: int | None = None) -> np.ndarray:
    """Radii ``rho_j >= 1`` spending the slack ``1 - delta - sum beta`` evenly over the first ``dims`` entries."""
    beta = np.asarray(beta, dtype=float)
    dims = beta.size if dims is None else dims
    spare = (1 - delta) - float(beta.sum())
    if spare < 0:
        raise ValueError("constant radii are not admissible for this delta")
    rho = np.ones(beta.size)
    active = [j for j in range(min(dims, beta.size)) if beta[j] > 0]
    for j in active:
        rho[j] += spare / (len(active) * beta[j]) * (1 - 1e-12)
    return rho


def coefficient_decay_bound(model: DiffusionModel, nus: Sequence[MultiIndex], rho: Sequence[float], delta: float) -> np.ndarray:
    """``||G|| ||f|| / (delta mu0) * 2**(||nu||_0/2) * prod rho_j**(-nu_j)`` per multi-index.

    ``mu0 = inf abar`` is the coercivity constant of the nominal operator in
    the ``H^1_0`` seminorm; the dual norms use the Poincare constant ``1/pi``.
    """
    mu0 = sup_inf(model.abar)[1]
    pre = functional_norm_bound(model) * rhs_dual_bound(model) / (delta * mu0)
    rho = np.asarray(rho, dtype=float)
    out = np.empty(len(nus))
    for k, nu in enumerate(nus):
        val = pre * 2.0 ** (nu.norm0 / 2)
        for j, n in nu.pairs:
            r = rho[j - 1] if j <= rho.size else 1.0
            val *= r ** (-n)
        out[k] = val
    return out


def rate_fit(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope of ``log err`` against ``log x``, with ``r**2``."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 points")
    x = np.array([p[0] for p in pairs], dtype=float)
    e = np.array([p[1] for p in pairs], dtype=float)
    if np.any(x <= 0) or np.any(e <= 0):
        raise ValueError("rate fit needs positive data")
    lx, le = np.log(x), np.log(e)
    slope, icpt = np.polyfit(lx, le, 1)
    resid = le - (slope * lx + icpt)
    ss = float(np.sum((le - le.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(slope), r2


def random_weighted_sparse(rng: np.random.Generator, omega: np.ndarray, s: float) -> np.ndarray:
    """Gaussian entries on a random support that is maximal for the budget ``sum omega**2 <= s``."""
    N = omega.size
    x = np.zeros(N)
    room = s * (1 + 1e-12)
    for j in rng.permutation(N):
        if omega[j] ** 2 <= room:
            x[j] = rng.standard_normal()
            room -= omega[j] ** 2
    return x


def sweep_oversample(
    index_set: IndexSet | Sequence[MultiIndex],
    omega: np.ndarray,
    s: float,
    C_values: Sequence[float],
    trials: int,
    seed: int,
    rtol: float = 1e-6,
    params: RecoveryParams | None = None,
) -> list[dict]:
    """Empirical success rates of exact recovery (``tau = 0``) against the oversampling constant.

    Trial ``k`` draws its sparse vector from stream ``(seed, 10**6 + k)`` and its
    points from seed ``7919 * seed + k``; the sample count is capped at ``N``.
    """
    nus = list(index_set)
    N = len(nus)
    dims = max(max(nu.max_dim for nu in nus), 1)
    params = params or RecoveryParams(tau=0.0, tol=1e-10, max_iters=200 * N)
    out = []
    for C in C_values:
        m = min(sample_count(C, s, N), N)
        ok = 0
        for k in range(trials):
            rng = cheb.sample_stream(seed, 10**6 + k)
            x0 = random_weighted_sparse(rng, omega, s)
            Y = cheb.sample_points(seed * 7919 + k, m, dims)
            Phi = cheb.tensor_cheb_matrix(nus, Y)
            try:
                res = solve_weighted_bpdn(Phi, Phi @ x0, omega, params)
                err = np.linalg.norm(res.values - x0) / np.linalg.norm(x0)
            except (RecoveryError, InfeasibleError, np.linalg.LinAlgError):
                err = math.inf
            ok += int(err <= rtol)
        out.append({"C": C, "m": m, "successes": ok, "trials": trials})
    return out
