"""Chebyshev polynomials orthonormal for the arcsine measure, sampling and quadrature.

The univariate family is ``T_0 = 1`` and ``T_j(t) = sqrt(2) cos(j arccos t)``,
orthonormal against ``dt / (pi sqrt(1 - t**2))`` on ``[-1, 1]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .multiindex import IndexSet, MultiIndex

SQRT2 = math.sqrt(2.0)

QUAD_BUDGET = 10**7


class DomainError(ValueError):
    pass


def _check_domain(t: np.ndarray) -> None:
    if t.size and (np.nanmax(np.abs(t)) > 1.0 or np.isnan(t).any()):
        bad = t.flat[int(np.nanargmax(np.where(np.isnan(t), np.inf, np.abs(t))))]
        raise DomainError(f"Chebyshev argument outside [-1, 1]: {bad!r}")


def cheb_table(max_degree: int, t) -> np.ndarray:
    """Values ``T_0 .. T_max_degree`` at every point of ``t``.

    Returns an array of shape ``t.shape + (max_degree + 1,)``. The plain
    three-term recurrence ``c_{k+1} = 2 t c_k - c_{k-1}`` runs on ``cos(k theta)``
    and the ``sqrt(2)`` factor is applied at the end.
    """
    t = np.asarray(t, dtype=float)
    _check_domain(t)
    out = np.empty(t.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = t
    for k in range(1, max_degree):
        out[..., k + 1] = 2.0 * t * out[..., k] - out[..., k - 1]
    out[..., 1:] *= SQRT2
    return out


def cheb1d(j: int, t):
    """Orthonormal Chebyshev polynomial of degree ``j`` at ``t`` (scalar or array).

    Raises
    ------
    DomainError
        If any ``|t| > 1``.
    """
    if j < 0:
        raise ValueError(f"degree must be nonnegative, got {j}")
    vals = cheb_table(j, t)[..., j]
    return float(vals) if np.ndim(vals) == 0 else vals


@dataclass(frozen=True)
class ParamPoint:
    """Point of ``[-1, 1]**dims``; coordinates past ``dims`` are taken as zero."""

    coords: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(x) for x in self.coords)
        if any(not (-1.0 <= x <= 1.0) for x in c):
            raise DomainError("parameter coordinates must lie in [-1, 1]")
        object.__setattr__(self, "coords", c)

    @property
    def dims(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.array(self.coords)


def tensor_cheb(nu: MultiIndex, y: ParamPoint | Sequence[float]) -> float:
    """Product of ``T_{nu_j}(y_j)`` over the support of ``nu``."""
    coords = y.coords if isinstance(y, ParamPoint) else tuple(y)
    if nu.max_dim > len(coords):
        raise ValueError(f"{nu!r} needs {nu.max_dim} coordinates, point has {len(coords)}")
    val = 1.0
    for j, n in nu.pairs:
        val *= cheb1d(n, coords[j - 1])
    return val


def tensor_cheb_matrix(indices: IndexSet | Sequence[MultiIndex], Y: np.ndarray) -> np.ndarray:
    """Matrix with entry ``(l, k) = T_{nu_k}(Y[l])``.

    Builds one univariate table per dimension and multiplies columns in place,
    so the cost is ``O(m * sum_k ||nu_k||_0)``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    nus = list(indices)
    m, dims = Y.shape
    need = max((nu.max_dim for nu in nus), default=0)
    if need > dims:
        raise ValueError(f"index set uses {need} dimensions, points have {dims}")
    maxdeg = [0] * need
    for nu in nus:
        for j, n in nu.pairs:
            maxdeg[j - 1] = max(maxdeg[j - 1], n)
    tables = [cheb_table(maxdeg[j], Y[:, j]) for j in range(need)]
    out = np.ones((m, len(nus)))
    for k, nu in enumerate(nus):
        for j, n in nu.pairs:
            out[:, k] *= tables[j - 1][:, n]
    return out


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_measure(rng: np.random.Generator, dims: int) -> ParamPoint:
    """Draw one point from the product arcsine measure via ``y = cos(pi u)``."""
    if dims < 1:
        raise ValueError("dims must be >= 1")
    return ParamPoint(tuple(np.cos(np.pi * rng.random(dims))))


def sample_points(seed: int, m: int, dims: int, start: int = 0) -> np.ndarray:
    """Rows ``start .. start+m-1`` of the deterministic sample sequence.

    Each row has its own stream, so a prefix of a longer draw equals a shorter
    draw and the result does not depend on how the rows get split up.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    out = np.empty((m, dims))
    for r in range(m):
        out[r] = np.cos(np.pi * sample_stream(seed, start + r).random(dims))
    return out


def save_points_csv(path: str | Path, Y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(Y):
            w.writerow([repr(float(x)) for x in row])


def load_points_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    Y = np.array(rows, dtype=float)
    _check_domain(Y)
    return Y


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


def quad_rule(n: int) -> QuadratureRule:
    """Gauss-Chebyshev rule with ``n`` nodes for the arcsine probability measure.

    Exact up to degree ``2n - 1``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    k = np.arange(1, n + 1)
    nodes = np.cos((2 * k - 1) * np.pi / (2 * n))
    if n % 2:
        nodes[n // 2] = 0.0  # exact midpoint instead of cos(pi/2) ~ 6e-17
    return QuadratureRule(nodes, np.full(n, 1.0 / n))


def default_quad_order(max_degree: int) -> int:
    return 2 * max_degree + 8


def _grid_orders(n, dims: int) -> list[int]:
    orders = [int(n)] * dims if np.isscalar(n) else [int(x) for x in n]
    if len(orders) != dims:
        raise ValueError("one quadrature order per dimension expected")
    if math.prod(orders) > QUAD_BUDGET:
        raise ValueError(
            f"tensor quadrature needs {math.prod(orders):.3g} evaluations (cap {QUAD_BUDGET}); "
            "use a Monte Carlo estimator instead"
        )
    return orders


def reference_coefficients(
    F: Callable[[np.ndarray], np.ndarray],
    indices: Sequence[MultiIndex],
    n,
    dims: int,
    chunk: int = 65536,
) -> np.ndarray:
    """Tensor Gauss-Chebyshev projections ``int F T_nu d eta`` for many ``nu``.

    Parameters
    ----------
    F : callable
        Vectorized: maps an ``(M, dims)`` array of points to ``M`` values.
    indices : sequence of MultiIndex
        Support must lie in ``1..dims``.
    n : int or sequence of int
        Quadrature order, either shared or per dimension.
    dims : int
        Number of active coordinates.
    chunk : int
        Maximum number of grid points passed to ``F`` at once.

    Returns
    -------
    ndarray
        One coefficient per multi-index.
    """
    nus = list(indices)
    if any(nu.max_dim > dims for nu in nus):
        raise ValueError("multi-index support exceeds dims")
    orders = _grid_orders(n, dims)
    rules = [quad_rule(o) for o in orders]
    total = math.prod(orders)
    vals = np.empty(total)
    grids = [r.nodes for r in rules]
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        pts = np.empty((flat.size, dims))
        rem = flat
        for j in range(dims - 1, -1, -1):
            rem, idx = np.divmod(rem, orders[j])
            pts[:, j] = grids[j][idx]
        vals[start : start + flat.size] = np.asarray(F(pts), dtype=float).reshape(-1)
    vals = vals.reshape(orders) if dims else vals.reshape(())

    maxdeg = [0] * dims
    for nu in nus:
        for j, k in nu.pairs:
            maxdeg[j - 1] = max(maxdeg[j - 1], k)
    # contract one axis at a time: coefficient tensor of shape (maxdeg_j + 1)_j
    coef = vals
    for j in range(dims):
        V = cheb_table(maxdeg[j], rules[j].nodes) * rules[j].weights[:, None]
        coef = np.tensordot(coef, V, axes=([0], [0]))
    out = np.empty(len(nus))
    for k, nu in enumerate(nus):
        out[k] = coef[nu.dense(dims)] if dims else coef
    return out


def reference_coefficient(F, nu: MultiIndex, n, dims: int, vectorized: bool = True) -> float:
    """Single projection coefficient; ``F`` may be pointwise if ``vectorized=False``."""
    G = F if vectorized else (lambda P: np.array([F(ParamPoint(tuple(p))) for p in P]))
    return float(reference_coefficients(G, [nu], n, dims)[0])
