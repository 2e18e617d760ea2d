"""Weighted sparsity tools and weighted l1 / hard-thresholding recovery.

Weights ``omega_j >= 1`` act twice: as costs (``omega_j**2`` per selected
entry against a budget ``s``) and inside the weighted norms

    |||x|||_{omega,p} = (sum |x_j|**p omega_j**(2-p))**(1/p).
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq, linprog

from .chebyshev import tensor_cheb_matrix
from .multiindex import IndexSet

NONZERO_RTOL = 1e-14
ORACLE_MAX_N = 200
WRIP_MAX_SUPPORTS = 10**6
BUDGET_RTOL = 1e-12
FULL_RANK_RTOL = 1e-8


class RecoveryError(RuntimeError):
    """Solver failure; ``info`` carries the last diagnostics."""

    def __init__(self, msg: str, info: dict | None = None):
        super().__init__(msg)
        self.info = info or {}


class InfeasibleError(RecoveryError):
    pass


@dataclass(frozen=True)
class WeightedVector:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape or v.ndim != 1:
            raise ValueError("values and weights must be 1-D arrays of equal length")
        if np.any(w < 1):
            raise ValueError("weights must be >= 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)


def _vw(x, omega=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, WeightedVector):
        return x.values, x.weights
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if omega is None else np.asarray(omega, dtype=float)
    if w.shape != x.shape:
        raise ValueError("weights must match the vector length")
    return x, w


def weighted_lp_norm(x, p: float, omega=None) -> float:
    """``(sum |x_j|**p omega_j**(2-p))**(1/p)`` for ``0 < p <= 2``."""
    if not 0 < p <= 2:
        raise ValueError("p must lie in (0, 2]")
    x, w = _vw(x, omega)
    return float(np.sum(np.abs(x) ** p * w ** (2 - p)) ** (1 / p))


def nonzero_mask(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    top = np.max(np.abs(x)) if x.size else 0.0
    if top == 0:
        return np.zeros(x.shape, dtype=bool)
    return np.abs(x) > NONZERO_RTOL * top


def weighted_sparsity(x, omega=None) -> float:
    """Sum of ``omega_j**2`` over the numerical support of ``x``."""
    x, w = _vw(x, omega)
    return float(np.sum(w[nonzero_mask(x)] ** 2))


def _fits(cost: float, s: float) -> bool:
    return cost <= s * (1 + BUDGET_RTOL)


def _tail_error(u: np.ndarray, support, q: float) -> float:
    keep = np.zeros(u.size, dtype=bool)
    keep[list(support)] = True
    return float(np.sum(u[~keep]) ** (1 / q))


def best_weighted_s_term_oracle(x, omega, s: float, q: float) -> tuple[tuple[int, ...], float]:
    """Exact best weighted ``s``-term approximation error in ``|||.|||_{omega,q}``.

    Solves the 0/1 knapsack ``max sum_{S} |x_j|**q omega_j**(2-q)`` subject to
    ``sum_S omega_j**2 <= s`` by depth-first branch and bound with the
    fractional relaxation as bound.

    Returns
    -------
    support : tuple of int
        Sorted 0-based positions of the best support.
    error : float
        ``|||x - x_S|||_{omega,q}``.
    """
    x, w = _vw(x, omega)
    if x.size > ORACLE_MAX_N:
        raise ValueError(f"exact oracle limited to N <= {ORACLE_MAX_N}, got {x.size}; use quasi_best_s_term")
    if not 0 < q <= 2:
        raise ValueError("q must lie in (0, 2]")
    u = np.abs(x) ** q * w ** (2 - q)
    c = w**2
    items = [j for j in range(x.size) if u[j] > 0 and _fits(c[j], s)]
    items.sort(key=lambda j: (-u[j] / c[j], j))
    uu = [float(u[j]) for j in items]
    cc = [float(c[j]) for j in items]
    n = len(items)
    cap = s * (1 + BUDGET_RTOL)

    def relax(k: int, room: float) -> float:
        val = 0.0
        for i in range(k, n):
            if cc[i] <= room:
                room -= cc[i]
                val += uu[i]
            else:
                return val + uu[i] * room / cc[i]
        return val

    best_val = -1.0
    best: list[int] = []
    chosen: list[int] = []

    def dfs(k: int, room: float, val: float):
        nonlocal best_val, best
        if val > best_val:
            best_val, best = val, list(chosen)
        if k == n or val + relax(k, room) <= best_val * (1 + 1e-15):
            return
        if cc[k] <= room:
            chosen.append(k)
            dfs(k + 1, room - cc[k], val + uu[k])
            chosen.pop()
        dfs(k + 1, room, val)

    dfs(0, cap, 0.0)
    support = tuple(sorted(items[i] for i in best))
    return support, _tail_error(u, support, q)


def quasi_best_s_term(x, omega, s: float, q: float = 2.0) -> tuple[tuple[int, ...], float]:
    """Greedy weighted ``s``-term selection.

    Visits entries by decreasing ``|x_j| / omega_j`` (value per unit cost for
    every ``q``) and keeps each one that still fits the budget.
    """
    x, w = _vw(x, omega)
    u = np.abs(x) ** q * w ** (2 - q)
    order = np.lexsort((np.arange(x.size), -np.abs(x) / w))
    room = s * (1 + BUDGET_RTOL)
    chosen = []
    for j in order:
        if u[j] == 0:
            break
        if w[j] ** 2 <= room:
            chosen.append(int(j))
            room -= w[j] ** 2
    support = tuple(sorted(chosen))
    return support, _tail_error(u, support, q) if x.size else 0.0


def stechkin_bound(x, omega, p: float, q: float, s: float) -> float:
    """``2**(1/p - 1/q) s**(1/q - 1/p) |||x|||_{omega,p}``; requires ``s >= 2 max omega**2``."""
    if not 0 < p < q <= 2:
        raise ValueError("need 0 < p < q <= 2")
    x, w = _vw(x, omega)
    if w.size and s < 2 * np.max(w) ** 2:
        raise ValueError("bound applies for s >= 2 max omega**2")
    return 2 ** (1 / p - 1 / q) * s ** (1 / q - 1 / p) * weighted_lp_norm(x, p, w)


@dataclass(frozen=True)
class SamplingMatrix:
    matrix: np.ndarray
    seed: int | None = None
    index_hash: str = ""

    @property
    def shape(self):
        return self.matrix.shape


def assemble_matrix(points, index_set: IndexSet | Sequence, seed: int | None = None) -> SamplingMatrix:
    """Rows are samples, columns follow the index-set order."""
    Y = np.atleast_2d(np.asarray([getattr(p, "coords", p) for p in points], dtype=float)) if not isinstance(points, np.ndarray) else np.atleast_2d(points)
    if Y.shape[0] == 0:
        raise ValueError("need at least one sample")
    digest = index_set.digest() if isinstance(index_set, IndexSet) else ""
    return SamplingMatrix(tensor_cheb_matrix(index_set, Y), seed, digest)


def _maximal_supports(c: np.ndarray, s: float, limit: int):
    """Yield supports maximal under ``sum c <= s``; raise once ``limit`` admissible supports are visited."""
    n = c.size
    order = [j for j in np.argsort(c, kind="stable") if _fits(c[j], s)]
    cap = s * (1 + BUDGET_RTOL)
    visited = 0
    stack = [(0, cap, ())]
    while stack:
        k, room, cur = stack.pop()
        visited += 1
        if visited > limit:
            raise ValueError(f"more than {limit} admissible supports; enumeration budget exceeded")
        extended = False
        for i in range(k, len(order)):
            j = order[i]
            if c[j] <= room:
                stack.append((i + 1, room - c[j], cur + (j,)))
                extended = True
        if not extended and cur:
            # maximal iff no skipped earlier element still fits
            cur_set = set(cur)
            if all(c[j] > room for j in order if j not in cur_set):
                yield cur


def wrip_constant(Phi_scaled: np.ndarray, omega, s: float, max_supports: int = WRIP_MAX_SUPPORTS) -> float:
    """Weighted restricted isometry constant by exhaustive search.

    Only maximal admissible supports are examined: by eigenvalue interlacing
    the extreme eigenvalues of a principal submatrix lie inside those of any
    larger one.
    """
    A = np.asarray(Phi_scaled, dtype=float)
    c = np.asarray(omega, dtype=float) ** 2
    if c.size == 0 or s < c.min():
        return 0.0
    G = A.T @ A
    delta = 0.0
    for S in _maximal_supports(c, s, max_supports):
        idx = np.array(S)
        ev = np.linalg.eigvalsh(G[np.ix_(idx, idx)])
        delta = max(delta, ev[-1] - 1.0, 1.0 - ev[0])
    return float(delta)


def operator_norm(A: np.ndarray, rtol: float = 1e-6, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    if A.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


@dataclass
class RecoveryParams:
    """Settings for :func:`solve_weighted_bpdn`.

    ``max_iters=None`` means ``max(200 * N, 20000)`` for the primal-dual loop;
    ``step_ratio`` is the primal/dual step ratio ``lam / sigma`` (``None`` adapts
    it on the fly). ``method`` is ``"pdhg"``, ``"pareto"`` (full column rank only),
    ``"lp"`` (``tau = 0`` only), ``"conic"`` or ``"auto"``, which uses ``"pareto"``
    whenever ``Phi`` has full column rank, ``"lp"`` for ``tau = 0`` otherwise and
    ``"conic"`` for the rest.
    """

    tau: float = 0.0
    max_iters: int | None = None
    tol: float = 1e-9
    step_ratio: float | None = None
    restart_every: int = 0
    check_every: int = 16
    method: str = "auto"

    def __post_init__(self):
        if self.method not in ("auto", "pdhg", "pareto", "lp", "conic"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class RecoveryResult:
    vector: WeightedVector
    iterations: int
    residual: float
    objective: float
    dual_bound: float
    info: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.vector.values


def _least_squares(Phi: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    sol, *_ = np.linalg.lstsq(Phi, b, rcond=None)
    return sol, float(np.linalg.norm(Phi @ sol - b))


def _residual_floor(Phi: np.ndarray, b: np.ndarray) -> float:
    return _least_squares(Phi, b)[1]


def feasibility_slack(tau: float, tol: float, bnorm: float) -> float:
    # relative part alone is useless at tau = 0
    return tau * (1 + tol) + tol * bnorm


def _weighted_lasso(R, c, w, mu, g0, cond, max_iters):
    """Accelerated proximal gradient for ``sum w|g| + mu/2 ||R g - c||**2``.

    ``R`` has full column rank, so the smooth part is strongly convex and the
    constant momentum ``(sqrt(k) - 1) / (sqrt(k) + 1)`` with ``k = cond**2``
    gives linear convergence.
    """
    L = mu * float(np.linalg.norm(R, 2)) ** 2
    step = 1.0 / L
    beta = (cond - 1) / (cond + 1)
    g = g0.copy()
    z = g0.copy()
    RtR = R.T @ R
    Rtc = R.T @ c
    for it in range(1, max_iters + 1):
        grad = mu * (RtR @ z - Rtc)
        u = z - step * grad
        g_new = np.sign(u) * np.maximum(np.abs(u) - step * w, 0.0)
        diff = float(np.linalg.norm(g_new - g))
        z = g_new + beta * (g_new - g)
        g = g_new
        if diff <= 1e-15 * max(float(np.linalg.norm(g)), 1e-300):
            break
    return g, it


def _bpdn_pareto(Phi, b, w, tau, tol, g_ls, floor, cond, params) -> RecoveryResult:
    """Solve the constrained problem through its penalized form.

    The residual of the penalized minimizer decreases in the penalty ``mu``;
    a bracketed root find on ``log mu`` matches it to ``tau``. The scaled
    residual ``mu (Phi g - b)`` is a dual certificate.
    """
    m, N = Phi.shape
    bnorm = float(np.linalg.norm(b))
    slack = feasibility_slack(tau, tol, bnorm)
    Q, R = np.linalg.qr(Phi)
    c = Q.T @ (b / bnorm)
    tau2 = (tau / bnorm) ** 2 - (floor / bnorm) ** 2
    inner = params.max_iters or max(50 * N, 2000)
    stats = {"method": "pareto", "lasso_iterations": 0}
    if tau2 <= (tol * (1 + tau / bnorm)) ** 2:
        g = g_ls.copy()
        mu = math.inf
    else:
        target = math.sqrt(tau2)
        cache: dict[float, np.ndarray] = {}
        warm = [np.zeros(N)]

        def resid(logmu: float) -> float:
            g, its = _weighted_lasso(R, c, w, math.exp(logmu), warm[0], cond, inner)
            stats["lasso_iterations"] += its
            warm[0] = g
            cache[logmu] = g
            return float(np.linalg.norm(R @ g - c)) - target

        Rtc = np.abs(R.T @ c)
        lo = math.log(float(np.min(w[Rtc > 0] / Rtc[Rtc > 0]))) if np.any(Rtc > 0) else 0.0
        hi = lo + 1.0
        while resid(hi) > 0:
            lo, hi = hi, hi + 2.0
            if hi - lo > 200 or hi > 700:
                raise RecoveryError("penalty bracket search failed", {"log_mu": hi})
        logmu = brentq(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
        g = cache.get(logmu)
        if g is None:
            resid(logmu)
            g = cache[logmu]
        mu = math.exp(logmu)
        g = g * bnorm
    res = float(np.linalg.norm(Phi @ g - b))
    if res > slack:
        # last-digit correction towards the least-squares point
        t = min(1.0, (res - tau) / max(res - floor, 1e-300))
        g = g + t * (g_ls - g)
        res = float(np.linalg.norm(Phi @ g - b))
    obj = float(w @ np.abs(g))
    if math.isfinite(mu):
        y = (mu / bnorm) * (Phi @ g - b)
        y = y / max(1.0, float(np.max(np.abs(Phi.T @ y) / w)))
        dual = float(-y @ b - tau * np.linalg.norm(y))
    else:
        dual = -math.inf
    stats.update(gap=obj - dual, residual=res, iterations=stats["lasso_iterations"])
    if res > slack or (math.isfinite(dual) and obj - dual > tol * (1 + obj)):
        raise RecoveryError(f"penalized path did not reach the tolerance (gap {obj - dual:.3e})", stats)
    return RecoveryResult(WeightedVector(g, w), stats["lasso_iterations"], res, obj, dual, stats)


def _support_polish(Phi, b, w, tau, g, cut=1e-9):
    """Closed-form minimizer on the support and signs of ``g`` with a dual direction, or ``None``.

    On a fixed support ``S`` with signs ``z`` the optimality conditions give
    ``g_S = g_ls - t d`` with ``d = (Phi_S^T Phi_S)^{-1} (w_S z)``, where ``t`` puts
    the residual on the ball. The residual of ``g_ls`` is orthogonal to
    ``Phi_S d``, so ``t`` solves a one-line quadratic. ``-Phi_S d`` matches
    ``-w_S z`` on the support and is returned as the dual direction; unlike the
    residual it stays clean when ``tau`` is near roundoff.
    """
    m, N = Phi.shape
    supp = np.flatnonzero(np.abs(g) > cut * max(float(np.max(np.abs(g))), 1e-300))
    if supp.size == 0 or supp.size > m:
        return None
    A = Phi[:, supp]
    Q, R = np.linalg.qr(A)
    d_abs = np.abs(np.diag(R))
    if d_abs.min() <= FULL_RANK_RTOL * d_abs.max():
        return None
    z = np.sign(g[supp])
    gl = solve_triangular(R, Q.T @ b)
    r_ls = A @ gl - b
    d = solve_triangular(R, solve_triangular(R, w[supp] * z, trans="T"))
    Ad = A @ d
    nd = float(Ad @ Ad)
    if nd == 0:
        return None
    gs = gl - math.sqrt(max(tau**2 - float(r_ls @ r_ls), 0.0) / nd) * d
    if np.any(np.sign(gs) != z):
        return None
    out = np.zeros(N)
    out[supp] = gs
    return out, -Ad


def _pull_into_ball(Phi, b, tau, slack, g, g_ls, floor):
    # move slightly along the segment to the least-squares point; the residual
    # norm is convex, so this lands on the ball
    res = float(np.linalg.norm(Phi @ g - b))
    if res > slack and res > floor:
        t = min(1.0, (res - tau) / max(res - floor, 1e-300))
        g = g + t * (g_ls - g)
        res = float(np.linalg.norm(Phi @ g - b))
    return g, res


def _dual_bound(Phi, b, w, tau, r):
    # the dual is linear along a ray, so scale r onto the boundary |Phi^T y| = w
    peak = float(np.max(np.abs(Phi.T @ r) / w))
    if peak == 0:
        return -math.inf
    y = r / peak
    return float(-y @ b - tau * np.linalg.norm(y))


def _bpdn_conic(Phi, b, w, tau, tol, slack, g_ls, floor) -> RecoveryResult:
    """Residual-ball problem handed to an interior-point conic solver (Clarabel via cvxpy).

    The solver output and its closed-form support polish are both certified
    with the residual-direction dual ``y = c (Phi g - b)``, which is exact at
    the minimizer because the constraint is active there.
    """
    import cvxpy as cp

    m, N = Phi.shape
    bnorm = float(np.linalg.norm(b))
    x = cp.Variable(N)
    if tau > 0:
        con = cp.norm(Phi @ x - b / bnorm) <= tau / bnorm
    else:
        con = Phi @ x == b / bnorm
    prob = cp.Problem(cp.Minimize(w @ cp.abs(x)), [con])
    try:
        with warnings.catch_warnings():
            # accuracy is checked below with our own certificate
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    except cp.SolverError as exc:
        raise RecoveryError(f"conic solver failed: {exc}", {"method": "conic"}) from exc
    if x.value is None:
        raise RecoveryError(f"conic solver returned status {prob.status}", {"method": "conic"})
    raw = np.asarray(x.value, dtype=float) * bnorm
    duals = [-math.inf]
    if tau == 0 and con.dual_value is not None:
        duals.append(_dual_bound(Phi, b, w, tau, np.asarray(con.dual_value, dtype=float)))
    cands = [(raw, None)]
    for cut in (1e-9, 1e-7, 1e-5, 1e-3):
        pol = _support_polish(Phi, b, w, tau, raw, cut)
        if pol is not None:
            cands.append(pol)
            duals.append(_dual_bound(Phi, b, w, tau, pol[1]))
    best = None
    for cand, _ in cands:
        cand, res = _pull_into_ball(Phi, b, tau, slack, cand, g_ls, floor)
        obj = float(w @ np.abs(cand))
        dual = max(duals)
        if tau > 0:
            dual = max(dual, _dual_bound(Phi, b, w, tau, Phi @ cand - b))
        key = (res > slack, obj - dual)
        if best is None or key < best[0]:
            best = (key, cand, res, obj, dual)
    _, g, res, obj, dual = best
    iters = int(getattr(prob.solver_stats, "num_iters", 0) or 0)
    info = {"method": "conic", "gap": obj - dual, "residual": res, "iterations": iters}
    if res > slack or obj - dual > tol * (1 + obj):
        raise RecoveryError(f"conic result failed the check (gap {obj - dual:.3e})", info)
    return RecoveryResult(WeightedVector(g, w), iters, res, obj, dual, info)


def _basis_pursuit_lp(Phi, b, w, tol, slack) -> RecoveryResult:
    """Equality-constrained case as a linear program (HiGHS), split ``g = u - v``."""
    m, N = Phi.shape
    res = linprog(
        np.concatenate([w, w]),
        A_eq=np.hstack([Phi, -Phi]),
        b_eq=b,
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RecoveryError(f"linear program failed: {res.message}", {"status": res.status})
    g = res.x[:N] - res.x[N:]
    # re-solve on the support to push the residual to roundoff
    supp = np.flatnonzero(g)
    if supp.size:
        gs, *_ = np.linalg.lstsq(Phi[:, supp], b, rcond=None)
        cand = np.zeros(N)
        cand[supp] = gs
        if np.linalg.norm(Phi @ cand - b) <= np.linalg.norm(Phi @ g - b):
            g = cand
    resid = float(np.linalg.norm(Phi @ g - b))
    obj = float(w @ np.abs(g))
    y = -np.asarray(res.eqlin.marginals, dtype=float)
    y = y / max(1.0, float(np.max(np.abs(Phi.T @ y) / w)))
    dual = float(-y @ b)
    info = {"method": "lp", "gap": obj - dual, "residual": resid, "iterations": int(res.nit)}
    if resid > slack or obj - dual > tol * (1 + obj):
        raise RecoveryError(f"linear program result failed the check (gap {obj - dual:.3e})", info)
    return RecoveryResult(WeightedVector(g, w), int(res.nit), resid, obj, dual, info)


def solve_weighted_bpdn(Phi, b, omega, params: RecoveryParams | None = None) -> RecoveryResult:
    """Weighted basis pursuit denoising ``min sum omega_j |g_j|  s.t.  ||Phi g - b|| <= tau``.

    The solver is picked by ``params.method`` (see :class:`RecoveryParams`).
    The primal-dual loop is Chambolle-Pock: weighted soft thresholding for the
    primal step, projection onto the residual ball (via Moreau) for the dual
    step. It stops on small relative change, feasibility and a small duality
    gap against the best dual bound seen so far.

    Raises
    ------
    InfeasibleError
        If ``tau`` is below the least-squares residual of ``b``.
    RecoveryError
        If the stopping test has not passed within ``max_iters``.
    """
    params = params or RecoveryParams()
    Phi = np.asarray(getattr(Phi, "matrix", Phi), dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(omega, dtype=float)
    m, N = Phi.shape
    tau, tol = params.tau, params.tol
    bnorm = float(np.linalg.norm(b))
    slack = feasibility_slack(tau, tol, bnorm)
    if bnorm <= tau:
        return RecoveryResult(WeightedVector(np.zeros(N), w), 0, bnorm, 0.0, 0.0)
    g_ls, floor = _least_squares(Phi, b)
    if floor > slack:
        raise InfeasibleError(
            f"residual radius {tau:.3e} is below the least-squares residual {floor:.3e}",
            {"ls_residual": floor},
        )
    method = params.method
    if method == "lp" and tau > 0:
        raise ValueError("the lp method only handles tau = 0")
    if method in ("auto", "pareto"):
        sv = np.linalg.svd(Phi, compute_uv=False)
        full_rank = m >= N and sv.size and sv[-1] > FULL_RANK_RTOL * sv[0]
        if method == "pareto" and not full_rank:
            raise ValueError("the pareto method needs a matrix with full column rank")
        if full_rank:
            return _bpdn_pareto(Phi, b, w, tau, tol, g_ls, floor, float(sv[0] / sv[-1]), params)
    if method == "lp" or (method == "auto" and tau == 0):
        return _basis_pursuit_lp(Phi, b, w, tol, slack)
    if method in ("auto", "conic"):
        return _bpdn_conic(Phi, b, w, tau, tol, slack, g_ls, floor)

    # work with unit-norm data; the problem is positively homogeneous in (b, tau)
    scale_b = bnorm
    b = b / scale_b
    tau_s = tau / scale_b
    slack_s = slack / scale_b
    g_ls = g_ls / scale_b
    floor_s = floor / scale_b
    L = operator_norm(Phi) * (1 + 1e-6)
    adaptive = params.step_ratio is None
    ratio = params.step_ratio or 1.0
    sigma = 0.99 / (L * math.sqrt(ratio))
    lam = 0.99 * math.sqrt(ratio) / L
    max_iters = params.max_iters or max(200 * N, 20000)
    adapt_rate = 0.5

    g = np.zeros(N)
    y = np.zeros(m)
    Pg = np.zeros(m)
    PTy = np.zeros(N)
    g_avg, y_avg, n_avg = np.zeros(N), np.zeros(m), 0
    best_dual = -math.inf
    last: dict = {}

    def dual_value(yv: np.ndarray) -> float:
        # scale into the dual feasible set |Phi^T y| <= omega
        scale = max(1.0, float(np.max(np.abs(Phi.T @ yv) / w)))
        yv = yv / scale
        return float(-yv @ b - tau_s * np.linalg.norm(yv))

    def measure(gv, yv):
        nonlocal best_dual
        best_dual = max(best_dual, dual_value(yv))
        obj = float(w @ np.abs(gv))
        res = float(np.linalg.norm(Phi @ gv - b))
        return obj, res

    def restore(gv, res):
        # pull an iterate slightly outside the ball back in along the segment to g_ls;
        # the residual norm is convex, so this t lands on the ball
        if res <= slack_s or res <= floor_s:
            return gv, res
        t = min(1.0, (res - tau_s) / (res - floor_s))
        gv = gv + t * (g_ls - gv)
        return gv, float(np.linalg.norm(Phi @ gv - b))

    def merit(gv, yv):
        obj, res = measure(gv, yv)
        return abs(obj - best_dual) / (1 + obj) + max(res - slack_s, 0.0)

    converged = False
    for it in range(1, max_iters + 1):
        g_old, y_old, Pg_old, PTy_old = g, y, Pg, PTy
        # primal step first, then dual step on the extrapolated point
        z = g - lam * PTy
        g = np.sign(z) * np.maximum(np.abs(z) - lam * w, 0.0)
        Pg = Phi @ g
        wv = y + sigma * (2 * Pg - Pg_old) - sigma * b
        if tau_s > 0:
            nwv = float(np.linalg.norm(wv))
            y = wv * max(0.0, 1.0 - sigma * tau_s / nwv) if nwv > 0 else wv
        else:
            y = wv
        PTy = Phi.T @ y

        if adaptive and adapt_rate > 1e-3:
            # balance primal and dual residuals (keeps lam * sigma fixed)
            pr = float(np.linalg.norm((g_old - g) / lam - (PTy_old - PTy)))
            dr = float(np.linalg.norm((y_old - y) / sigma - (Pg_old - Pg)))
            if pr > 2 * dr:
                lam, sigma = lam * (1 + adapt_rate), sigma / (1 + adapt_rate)
                adapt_rate *= 0.99
            elif dr > 2 * pr:
                lam, sigma = lam / (1 + adapt_rate), sigma * (1 + adapt_rate)
                adapt_rate *= 0.99

        if it % params.check_every == 0 or it == max_iters:
            change = float(np.linalg.norm(g - g_old)) / max(float(np.linalg.norm(g)), 1e-300)
            obj, res = measure(g, y)
            cand, cres = restore(g, res)
            cobj = float(w @ np.abs(cand))
            gap = cobj - best_dual
            last = {"gap": gap * scale_b, "residual": cres * scale_b, "change": change, "iterations": it}
            if change < tol and cres <= slack_s and gap <= tol * (1 + cobj):
                g = cand
                converged = True
                break
        if params.restart_every:
            g_avg += g
            y_avg += y
            n_avg += 1
            if n_avg >= params.restart_every:
                ga, ya = g_avg / n_avg, y_avg / n_avg
                if merit(ga, ya) < merit(g, y):
                    g, y = ga, ya
                    Pg, PTy = Phi @ g, Phi.T @ y
                g_avg[:] = 0.0
                y_avg[:] = 0.0
                n_avg = 0
    if not converged:
        raise RecoveryError(f"no convergence in {max_iters} iterations (gap {last.get('gap', math.nan):.3e})", last)

    g = g * scale_b
    obj = float(w @ np.abs(g))
    res = float(np.linalg.norm(Phi @ g - b * scale_b))
    return RecoveryResult(WeightedVector(g, w), last["iterations"], res, obj, best_dual * scale_b, last)


def solve_weighted_iht(Phi, b, omega, s: float, max_iters: int = 2000, tol: float = 1e-12) -> RecoveryResult:
    """Weighted iterative hard thresholding with normalized steps.

    Each step moves along the gradient restricted to the current support with
    the exact line-search length, then keeps the greedy weighted ``s``-term
    part. When the support changes the step is halved until it passes the
    usual acceptance test. The iterate with the smallest residual is returned.
    """
    Phi = np.asarray(getattr(Phi, "matrix", Phi), dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(omega, dtype=float)
    if s < np.min(w) ** 2:
        raise ValueError("budget s is below the smallest omega**2")
    m, N = Phi.shape
    g = np.zeros(N)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        return RecoveryResult(WeightedVector(g, w), 0, 0.0, 0.0, 0.0)
    L2 = operator_norm(Phi) ** 2

    def project(v):
        supp, _ = quasi_best_s_term(v, w, s, 2.0)
        out = np.zeros(N)
        idx = list(supp)
        out[idx] = v[idx]
        return out, supp

    r = b.copy()
    best_g, best_res = g.copy(), bnorm
    supp: tuple = ()
    ups = 0
    prev_res = bnorm
    it = 0
    for it in range(1, max_iters + 1):
        grad = Phi.T @ r
        if supp:
            gs = np.zeros(N)
            gs[list(supp)] = grad[list(supp)]
        else:
            gs = grad
        denom = float(np.linalg.norm(Phi @ gs)) ** 2
        mu = float(gs @ gs) / denom if denom > 0 else 1.0 / max(L2, 1e-300)
        for _ in range(60):
            g_new, s_new = project(g + mu * grad)
            if s_new == supp:
                break
            d = g_new - g
            pd = float(np.linalg.norm(Phi @ d)) ** 2
            if pd == 0 or mu <= 0.99 * float(d @ d) / pd:
                break
            mu *= 0.5
        g, supp = g_new, s_new
        r = b - Phi @ g
        res = float(np.linalg.norm(r))
        if res < best_res:
            best_g, best_res = g.copy(), res
        ups = ups + 1 if res > prev_res * (1 + 1e-12) else 0
        if ups >= 20:
            raise RecoveryError("iterative thresholding diverged; reduce the step size", {"residual": res})
        if res <= tol * bnorm or abs(prev_res - res) <= tol * bnorm:
            prev_res = res
            break
        prev_res = res
    return RecoveryResult(WeightedVector(best_g, w), it, best_res, weighted_lp_norm(best_g, 1, w), math.nan)


MAGIC = b"CSPGBIN1"


def save_binary(path: str | Path, array: np.ndarray, header: dict | None = None) -> None:
    """Write ``array`` as little-endian float64 behind a JSON header."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    head = dict(header or {})
    head["shape"] = list(arr.shape)
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes())


def load_binary(path: str | Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a CSPG binary container")
        (n,) = struct.unpack("<Q", fh.read(8))
        head = json.loads(fh.read(n).decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = tuple(head.get("shape", (data.size,)))
    if math.prod(shape) != data.size:
        raise ValueError(f"{path}: payload size does not match header shape {shape}")
    return data.reshape(shape).astype(float), head
