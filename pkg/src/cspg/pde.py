"""Piecewise-linear finite elements for the affine-parametric diffusion problem on (0, 1).

Solves ``-(a(x, y) u')' = f`` with ``u(0) = u(1) = 0`` and

    a(x, y) = abar(x) + sum_{j <= B} y_j psi_j(x),

then applies a bounded linear functional to ``u_h``. Coefficient integrals
use 3-point Gauss quadrature per element.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solveh_banded
from scipy.optimize import minimize_scalar

from .multiindex import WeightParams

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)  # mapped to [0, 1]
_GAUSS_W = 0.5 * _GAUSS_W

SUP_TOL = 1e-6


class EllipticityError(ValueError):
    pass


class SolveError(RuntimeError):
    pass


Func = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PsiFamily:
    """``psi_j(x) = c j**(-tau) sin(j pi x)`` for ``j = 1..count``."""

    c: float
    tau: float
    count: int

    def __call__(self, j: int, x):
        return self.c * j ** (-self.tau) * np.sin(j * np.pi * np.asarray(x, dtype=float))

    def sup_bound(self, j: int) -> float:
        return abs(self.c) * j ** (-self.tau)


@dataclass(frozen=True)
class Functional:
    """Either ``u -> u(x0)`` (kind ``point``) or ``u -> int g u`` (kind ``average``)."""

    kind: str = "average"
    x0: float = 0.5
    g: Func | None = None

    def __post_init__(self):
        if self.kind not in ("point", "average"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "point" and not 0.0 < self.x0 < 1.0:
            raise ValueError(f"evaluation point {self.x0} outside (0, 1)")

    def weight(self, x: np.ndarray) -> np.ndarray:
        return np.ones_like(x) if self.g is None else np.asarray(self.g(x), dtype=float)


@dataclass(eq=False)
class DiffusionModel:
    """Parametric coefficient, source, functional and the declared ellipticity constants."""

    abar: Func
    psis: PsiFamily
    rhs: Func
    functional: Functional = field(default_factory=Functional)
    r: float = 0.02
    R: float = 4.0
    kappa: float = 0.5
    description: str = ""

    def __hash__(self):
        return id(self)

    @property
    def count(self) -> int:
        return self.psis.count

    def truncated(self, B: int) -> "DiffusionModel":
        """Same model with only the first ``B`` coefficient functions."""
        fam = PsiFamily(self.psis.c, self.psis.tau, min(B, self.psis.count))
        return DiffusionModel(self.abar, fam, self.rhs, self.functional, self.r, self.R, self.kappa, self.description)


def _const(v: float) -> Func:
    return lambda x: np.full(np.shape(x), float(v))


def default_model(count: int = 64, tau: float = 3.0, functional: Functional | None = None) -> DiffusionModel:
    """``abar = 2``, ``f = 1``, ``psi_j = c j**-tau sin(j pi x)`` with ``sum ||psi_j|| = 0.9``.

    The constants ``r = 0.02``, ``R = 4`` leave room for the weighted
    condition with ``v_j = j**(1/2)``, ``p = 1/2``.
    """
    c = 0.9 / sum(j ** (-tau) for j in range(1, count + 1))
    return DiffusionModel(
        abar=_const(2.0),
        psis=PsiFamily(c, tau, count),
        rhs=_const(1.0),
        functional=functional or Functional("average"),
        r=0.02,
        R=4.0,
        kappa=0.5,
        description="default",
    )


def _abar_from_spec(spec) -> Func:
    if isinstance(spec, (int, float)):
        return _const(spec)
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return _const(spec["value"])
    if kind == "cosine":
        mean, amp, freq = float(spec["mean"]), float(spec.get("amp", 0.0)), float(spec.get("freq", 1.0))
        return lambda x: mean + amp * np.cos(2 * np.pi * freq * np.asarray(x, dtype=float))
    raise ValueError(f"unknown function spec {spec!r}")


def model_from_config(cfg: dict) -> DiffusionModel:
    """Build a model from a plain dict (keys ``abar``, ``psi``, ``rhs``, ``functional``, ``r``, ``R``, ``kappa``)."""
    allowed = {"abar", "psi", "rhs", "functional", "r", "R", "kappa"}
    extra = set(cfg) - allowed
    if extra:
        raise ValueError(f"unknown model key(s): {sorted(extra)}")
    abar = _abar_from_spec(cfg.get("abar", 2.0))
    rhs = _abar_from_spec(cfg.get("rhs", 1.0))
    psi = dict(cfg.get("psi", {}))
    bad = set(psi) - {"c", "tau", "count"}
    if bad:
        raise ValueError(f"unknown psi key(s): {sorted(bad)}")
    tau = float(psi.get("tau", 3.0))
    count = int(psi.get("count", 64))
    kappa = float(cfg.get("kappa", 0.5))
    c = psi.get("c")
    if c is None:
        inf_abar = sup_inf(abar)[1]
        c = 0.9 * kappa * inf_abar / sum(j ** (-tau) for j in range(1, count + 1))
    fspec = dict(cfg.get("functional", {"kind": "average"}))
    bad = set(fspec) - {"kind", "x0", "g"}
    if bad:
        raise ValueError(f"unknown functional key(s): {sorted(bad)}")
    g = fspec.get("g")
    func = Functional(fspec.get("kind", "average"), float(fspec.get("x0", 0.5)), None if g is None else _abar_from_spec(g))
    return DiffusionModel(
        abar, PsiFamily(float(c), tau, count), rhs, func,
        float(cfg.get("r", 0.02)), float(cfg.get("R", 4.0)), kappa, "config",
    )


@dataclass(frozen=True)
class FemDiscretization:
    n_cells: int
    B: int
    quad_pts: int = 3

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError("need at least 2 cells")
        if self.B < 0:
            raise ValueError("truncation level must be nonnegative")
        if self.quad_pts != 3:
            raise ValueError("only 3-point Gauss quadrature is implemented")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @classmethod
    def from_h(cls, h: float, B: int) -> "FemDiscretization":
        return cls(max(2, int(round(1.0 / h))), B)


@dataclass
class FemSolution:
    nodal: np.ndarray  # interior nodes only
    y: np.ndarray
    disc: FemDiscretization
    h1_seminorm: float

    def full_nodal(self) -> np.ndarray:
        return np.concatenate([[0.0], self.nodal, [0.0]])

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.disc.n_cells + 1)


def coefficient_eval(model: DiffusionModel, y, B: int, x):
    """``abar(x) + sum_{j <= B} y_j psi_j(x)``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    B = min(B, model.count, y.size)
    x = np.asarray(x, dtype=float)
    out = np.asarray(model.abar(x), dtype=float).copy()
    for j in range(1, B + 1):
        if y[j - 1] != 0.0:
            out = out + y[j - 1] * model.psis(j, x)
    return out if out.ndim else float(out)


def _polish(fn: Func, x: np.ndarray, k: int, sign: float) -> float:
    # bounded 1-D search between the neighbours of the best grid point
    a, b = x[max(k - 1, 0)], x[min(k + 1, x.size - 1)]
    res = minimize_scalar(lambda t: -sign * float(np.asarray(fn(np.array([t])))[0]),
                          bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return max(sign * float(np.asarray(fn(x[k : k + 1]))[0]), -float(res.fun)) * sign


def sup_inf(fn: Func, start: int = 6, max_level: int = 20) -> tuple[float, float]:
    """Sup and inf of ``fn`` over [0, 1].

    Dyadic grids are refined until the locally polished extrema change by
    less than 1e-6 between levels.
    """
    prev = None
    for level in range(start, max_level + 1):
        x = np.linspace(0.0, 1.0, 2**level + 1)
        v = np.asarray(fn(x), dtype=float)
        cur = (_polish(fn, x, int(np.argmax(v)), 1.0), _polish(fn, x, int(np.argmin(v)), -1.0))
        if prev is not None and abs(cur[0] - prev[0]) < SUP_TOL and abs(cur[1] - prev[1]) < SUP_TOL:
            return cur
        prev = cur
    return prev


def psi_sup(model: DiffusionModel, j: int) -> float:
    return sup_inf(lambda x: np.abs(model.psis(j, x)))[0]


def beta0_upper(model: DiffusionModel, j: int) -> float:
    """``||psi_j||_inf / inf abar``."""
    inf_abar = sup_inf(model.abar)[1]
    if inf_abar <= 0:
        raise EllipticityError("inf abar must be positive")
    return psi_sup(model, j) / inf_abar


def beta0_sequence(model: DiffusionModel) -> np.ndarray:
    return np.array([beta0_upper(model, j) for j in range(1, model.count + 1)])


@dataclass
class CheckReport:
    ok: bool
    margin: float
    details: dict = field(default_factory=dict)


def _validation_grid(model: DiffusionModel) -> np.ndarray:
    # resolve the highest frequency with >= 16 points per half-wave
    level = max(10, math.ceil(math.log2(16 * max(model.count, 1))) + 1)
    return np.linspace(0.0, 1.0, 2**level + 1)[1:-1]


def check_ellipticity(model: DiffusionModel) -> CheckReport:
    """Uniform ellipticity ``r <= abar -+ sum |psi_j| <= R`` and the smallness ``sum ||psi_j|| <= kappa inf abar``."""
    x = _validation_grid(model)
    ab = np.asarray(model.abar(x), dtype=float)
    s = np.zeros_like(x)
    for j in range(1, model.count + 1):
        s += np.abs(model.psis(j, x))
    lo = ab - s - model.r
    hi = model.R - (ab + s)
    small = model.kappa * sup_inf(model.abar)[1] - sum(psi_sup(model, j) for j in range(1, model.count + 1))
    margin = float(min(lo.min(), hi.min(), small))
    details = {"lower_margin": float(lo.min()), "upper_margin": float(hi.min()), "smallness_margin": float(small)}
    if margin < 0:
        k = int(np.argmin(np.minimum(lo, hi)))
        details["worst_x"] = float(x[k])
    return CheckReport(margin >= 0 and model.kappa < 1, margin, details)


def check_weighted_uea(model: DiffusionModel, w: WeightParams, p: float) -> CheckReport:
    """Weighted ellipticity and weighted summability for ``(w, p)``.

    Checks ``sum_j v_j**((2-p)/p) |psi_j(x)| <= min(abar - r, R - abar)`` on a
    grid and reports ``sum_j v_j**(2-p) ||psi_j||**p`` together with the decay
    exponent of its terms. With finitely many ``psi_j`` the sum is always
    finite; ``tail_exponent <= 1`` flags a series that would diverge if the
    family were continued with the same decay.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    x = _validation_grid(model)
    ab = np.asarray(model.abar(x), dtype=float)
    cap = np.minimum(ab - model.r, model.R - ab)
    acc = np.zeros_like(x)
    lsum = 0.0
    terms = []
    first_bad = None
    for j in range(1, model.count + 1):
        lv = w.log2_v(j)
        if lv == math.inf:
            if model.psis.sup_bound(j) > 0:
                first_bad = first_bad or j
            break
        v = 2.0**lv
        psij = np.abs(model.psis(j, x))
        acc += v ** ((2 - p) / p) * psij
        term = v ** (2 - p) * psi_sup(model, j) ** p
        lsum += term
        terms.append(term)
        if first_bad is None and np.any(acc > cap):
            first_bad = j
        if term < 1e-14 * lsum and np.max(v ** ((2 - p) / p) * psij) < 1e-14 * max(acc.max(), 1e-300):
            break
    slack = cap - acc
    margin = float(slack.min())
    details = {"lp_sum": lsum, "terms": len(terms)}
    if len(terms) >= 8:
        jj = np.arange(1, len(terms) + 1)
        tail = slice(len(terms) // 2, None)
        t = np.array(terms)
        pos = t[tail] > 0
        if pos.sum() >= 2:
            slope = np.polyfit(np.log(jj[tail][pos]), np.log(t[tail][pos]), 1)[0]
            details["tail_exponent"] = float(-slope)
    ok = margin >= 0 and math.isfinite(lsum)
    if not ok:
        k = int(np.argmin(slack))
        details["violating_x"] = float(x[k])
        details["violating_j_range"] = (first_bad or 1, len(terms))
    return CheckReport(ok, margin, details)


@lru_cache(maxsize=32)
def _assembly_data(model: DiffusionModel, n_cells: int, B: int):
    h = 1.0 / n_cells
    left = np.arange(n_cells) * h
    xq = (left[:, None] + h * _GAUSS_X[None, :]).reshape(-1)  # (n_cells*3,)
    abar_q = np.asarray(model.abar(xq), dtype=float)
    B = min(B, model.count)
    psi_q = np.empty((B, xq.size))
    for j in range(1, B + 1):
        psi_q[j - 1] = model.psis(j, xq)
    # load vector: int f phi_i; hats restricted to an element are 1-t and t
    fq = np.asarray(model.rhs(xq), dtype=float).reshape(n_cells, 3)
    fl = h * (fq * (1 - _GAUSS_X) * _GAUSS_W).sum(axis=1)  # contributes to left node
    fr = h * (fq * _GAUSS_X * _GAUSS_W).sum(axis=1)  # right node
    load = fl[1:] + fr[:-1]
    # functional weights on interior nodes
    fun = model.functional
    if fun.kind == "average":
        gq = fun.weight(xq).reshape(n_cells, 3)
        gl = h * (gq * (1 - _GAUSS_X) * _GAUSS_W).sum(axis=1)
        gr = h * (gq * _GAUSS_X * _GAUSS_W).sum(axis=1)
        gvec = gl[1:] + gr[:-1]
    else:
        gvec = np.zeros(n_cells - 1)
        pos = fun.x0 * n_cells
        k = min(int(math.floor(pos)), n_cells - 1)
        t = pos - k
        if 1 <= k <= n_cells - 1:
            gvec[k - 1] += 1 - t
        if k + 1 <= n_cells - 1:
            gvec[k] += t
    return xq, abar_q, psi_q, load, gvec


def _coefficient_at_quad(model, disc, Y: np.ndarray) -> np.ndarray:
    xq, abar_q, psi_q, _, _ = _assembly_data(model, disc.n_cells, disc.B)
    Y = np.atleast_2d(Y)
    A = np.broadcast_to(abar_q, (Y.shape[0], abar_q.size)).copy()
    for j in range(min(psi_q.shape[0], Y.shape[1])):
        # elementwise accumulation keeps every row independent of batch size
        A += Y[:, j : j + 1] * psi_q[j][None, :]
    return A


def _check_positive(A: np.ndarray, xq: np.ndarray) -> None:
    bad = A <= 0
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise EllipticityError(
            f"coefficient a = {A[r, c]:.3g} <= 0 at quadrature point x = {xq[c]:.6f} (sample {r})"
        )


def _stiffness_bands(A: np.ndarray, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    h = 1.0 / n_cells
    A3 = A.reshape(A.shape[0], n_cells, 3)
    ke = (A3[:, :, 0] * _GAUSS_W[0] + A3[:, :, 1] * _GAUSS_W[1] + A3[:, :, 2] * _GAUSS_W[2]) / h
    diag = ke[:, :-1] + ke[:, 1:]
    off = -ke[:, 1:-1]
    return diag, off


def _validate_y(y: np.ndarray) -> None:
    if y.size and (np.max(np.abs(y)) > 1.0 or np.isnan(y).any()):
        raise ValueError("parameter outside the [-1, 1] box")


def fem_solve(model: DiffusionModel, y, disc: FemDiscretization) -> FemSolution:
    """Galerkin solution of the truncated problem at one parameter ``y``.

    Raises
    ------
    EllipticityError
        If ``a(x, y) <= 0`` at some quadrature point.
    SolveError
        If the tridiagonal solve leaves a relative residual above 1e-12.
    """
    y = np.asarray(getattr(y, "coords", y), dtype=float).reshape(-1)
    _validate_y(y)
    xq, _, _, load, _ = _assembly_data(model, disc.n_cells, disc.B)
    A = _coefficient_at_quad(model, disc, y[None, :])
    _check_positive(A, xq)
    diag, off = _stiffness_bands(A, disc.n_cells)
    diag, off = diag[0], off[0]
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    u = solveh_banded(ab, load, lower=False)
    res = diag * u - load
    res[:-1] += off * u[1:]
    res[1:] += off * u[:-1]
    # normwise backward error; the plain residual/rhs ratio grows with cond(K) ~ n**2
    knorm = float(np.max(np.abs(diag) + np.abs(np.concatenate([off, [0.0]])) + np.abs(np.concatenate([[0.0], off]))))
    rel = float(np.max(np.abs(res))) / max(knorm * float(np.max(np.abs(u))) + float(np.max(np.abs(load))), 1e-300)
    if rel > 1e-12:
        raise SolveError(f"linear solve backward error {rel:.2e} exceeds 1e-12")
    full = np.concatenate([[0.0], u, [0.0]])
    h1 = math.sqrt(float(np.sum(np.diff(full) ** 2)) * disc.n_cells)
    return FemSolution(u, y.copy(), disc, h1)


def eval_functional(model: DiffusionModel, sol: FemSolution) -> float:
    """Apply the model's functional to a discrete solution."""
    fun = model.functional
    if fun.kind == "point":
        if not 0.0 < fun.x0 < 1.0:
            raise ValueError(f"evaluation point {fun.x0} outside (0, 1)")
        return float(np.interp(fun.x0, sol.grid(), sol.full_nodal()))
    _, _, _, _, gvec = _assembly_data(model, sol.disc.n_cells, sol.disc.B)
    return float(gvec @ sol.nodal)


def solve_functionals(model: DiffusionModel, Y: np.ndarray, disc: FemDiscretization) -> np.ndarray:
    """``G(u_h(y))`` for every row of ``Y`` using a vectorized tridiagonal sweep.

    Each output depends only on its own row, so any split of ``Y`` into batches
    gives bitwise-identical values.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    _validate_y(Y)
    xq, _, _, load, gvec = _assembly_data(model, disc.n_cells, disc.B)
    A = _coefficient_at_quad(model, disc, Y)
    _check_positive(A, xq)
    diag, off = _stiffness_bands(A, disc.n_cells)
    u = thomas_spd(diag, off, load)
    # point evaluation is stored as interpolation weights, so both kinds are a dot product
    return _rowwise_dot(u, gvec)


def _rowwise_dot(U: np.ndarray, g: np.ndarray) -> np.ndarray:
    # fixed summation order per row (BLAS gemv may block rows differently by batch size)
    out = np.zeros(U.shape[0])
    for i in np.flatnonzero(g):
        out += U[:, i] * g[i]
    return out


def thomas_spd(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched solve of symmetric tridiagonal systems; rows are independent systems.

    Parameters
    ----------
    diag : (m, n) array
    off : (m, n-1) array
        Super- (= sub-) diagonal.
    rhs : (n,) or (m, n) array
    """
    m, n = diag.shape
    b = np.broadcast_to(rhs, (m, n)).astype(float, copy=True)
    c = np.empty((m, max(n - 1, 0)))
    d = diag[:, 0].copy()
    for i in range(n - 1):
        c[:, i] = off[:, i] / d
        b[:, i + 1] -= c[:, i] * b[:, i]
        d_next = diag[:, i + 1] - c[:, i] * off[:, i]
        b[:, i] /= d
        d = d_next
    b[:, n - 1] /= d
    for i in range(n - 2, -1, -1):
        b[:, i] -= c[:, i] * b[:, i + 1]
    return b


def h1_error(sol: FemSolution, du_exact: Func) -> float:
    """``|u - u_h|_{H^1}`` using 3-point Gauss quadrature per element."""
    n = sol.disc.n_cells
    h = 1.0 / n
    slopes = np.diff(sol.full_nodal()) / h
    xq = (np.arange(n)[:, None] * h + h * _GAUSS_X[None, :])
    err = (np.asarray(du_exact(xq)) - slopes[:, None]) ** 2
    return math.sqrt(float(h * (err * _GAUSS_W).sum()))


def l2_norm(fn: Func, n: int = 4096) -> float:
    h = 1.0 / n
    xq = (np.arange(n)[:, None] * h + h * _GAUSS_X[None, :])
    return math.sqrt(float(h * ((np.asarray(fn(xq)) ** 2) * _GAUSS_W).sum()))


def rhs_dual_bound(model: DiffusionModel) -> float:
    """``||f||_{H^-1} <= ||f||_{L^2} / pi`` (Poincare constant on (0, 1))."""
    return l2_norm(model.rhs) / math.pi


def functional_norm_bound(model: DiffusionModel) -> float:
    """Upper bound for the dual norm of the functional with respect to ``|.|_{H^1}``."""
    fun = model.functional
    if fun.kind == "point":
        return math.sqrt(fun.x0 * (1 - fun.x0))
    return l2_norm(fun.weight) / math.pi


def stability_bound(model: DiffusionModel) -> float:
    """A priori ``|u_h|_{H^1} <= ||f||_{L^2} / (pi r)``."""
    return l2_norm(model.rhs) / (math.pi * model.r)


def lipschitz_bound(model: DiffusionModel) -> float:
    """``|G(u(y)) - G(u(y'))| <= L ||y - y'||_inf`` with ``L = ||G|| ||f|| sum ||psi_j|| / r**2``."""
    total = sum(psi_sup(model, j) for j in range(1, model.count + 1))
    return functional_norm_bound(model) * rhs_dual_bound(model) * total / model.r**2


def truncation_tail_bound(beta0: Sequence[float] | DiffusionModel, J: int, p0: float) -> float:
    """Bound ``min(1/(1/p0 - 1), 1) (sum beta**p0)**(1/p0) J**(-(1/p0 - 1))`` on ``sum_{j>J} beta_j``.

    ``beta0`` is either the sequence itself or a model whose sequence is
    estimated by :func:`beta0_upper`.
    """
    if not 0 < p0 < 1:
        raise ValueError("p0 must lie in (0, 1)")
    if J < 1:
        raise ValueError("J must be >= 1")
    b = beta0_sequence(beta0) if isinstance(beta0, DiffusionModel) else np.asarray(beta0, dtype=float)
    if np.all(b[J:] == 0):
        return 0.0
    q = 1 / p0 - 1
    return min(1 / q, 1.0) * float(np.sum(b**p0)) ** (1 / p0) * J ** (-q)


@dataclass(frozen=True)
class Calibration:
    """Constants turning a target tolerance into ``h = c_h eps**(1/2)`` and ``B = c_B eps**(-p0/(1-p0))``."""

    c_h: float = 4.0
    c_B: float = 1.0
    p0: float = 0.25


def discretization_for_tolerance(eps: float, model: DiffusionModel, cal: Calibration = Calibration()) -> FemDiscretization:
    if eps <= 0:
        raise ValueError("tolerance must be positive")
    h = min(cal.c_h * math.sqrt(eps), 0.5)
    B = min(model.count, math.ceil(cal.c_B * eps ** (-cal.p0 / (1 - cal.p0))))
    return FemDiscretization(max(2, math.ceil(1.0 / h)), B)


def save_solution_csv(path: str | Path, sol: FemSolution) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "u_h"])
        for x, u in zip(sol.grid(), sol.full_nodal()):
            wr.writerow([repr(float(x)), repr(float(u))])
