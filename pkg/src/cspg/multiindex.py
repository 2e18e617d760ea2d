"""Multi-indices, product weights and the candidate index sets they define.

A multi-index is stored sparsely as sorted ``(j, nu_j)`` pairs with 1-based
dimension labels. Weights are handled in log2 space throughout: for
``theta = sqrt(2)`` the membership test ``omega_nu**2 <= s/2`` reads

    ||nu||_0 + sum_j 2 * nu_j * log2(v_j) <= log2(s/2)

and exponents of large index sets would otherwise overflow quickly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)

# Absolute slack (in log2 units) for boundary membership decisions.
LOG_SLACK = 1e-12

MAX_SUBSET_DIM = 20


class UnboundedIndexSetError(ValueError):
    """Raised when the requested weighted index set is infinite."""

    def __init__(self, detail: str = ""):
        msg = "unbounded index set"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MultiIndex:
    """Finitely supported sequence of nonnegative integers.

    Parameters
    ----------
    pairs : iterable of (int, int) or mapping
        ``(j, nu_j)`` entries with ``j >= 1``. Zero exponents are dropped.
    """

    __slots__ = ("_pairs", "_hash")

    def __init__(self, pairs: Iterable[tuple[int, int]] | dict = ()):
        if isinstance(pairs, dict):
            pairs = pairs.items()
        entries: dict[int, int] = {}
        for j, n in pairs:
            j, n = int(j), int(n)
            if j < 1:
                raise ValueError(f"dimension labels start at 1, got {j}")
            if n < 0:
                raise ValueError(f"negative exponent {n} at dimension {j}")
            if j in entries:
                raise ValueError(f"duplicate dimension {j}")
            if n > 0:
                entries[j] = n
        self._pairs = tuple(sorted(entries.items()))
        self._hash = hash(self._pairs)

    @classmethod
    def from_dense(cls, values: Sequence[int]) -> "MultiIndex":
        return cls((j + 1, n) for j, n in enumerate(values))

    @classmethod
    def zero(cls) -> "MultiIndex":
        return cls()

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return self._pairs

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self._pairs)

    @property
    def norm0(self) -> int:
        return len(self._pairs)

    @property
    def norm1(self) -> int:
        return sum(n for _, n in self._pairs)

    @property
    def max_dim(self) -> int:
        """Largest dimension in the support, 0 for the zero index."""
        return self._pairs[-1][0] if self._pairs else 0

    def __getitem__(self, j: int) -> int:
        for k, n in self._pairs:
            if k == j:
                return n
        return 0

    def dense(self, d: int | None = None) -> tuple[int, ...]:
        d = self.max_dim if d is None else d
        if d < self.max_dim:
            raise ValueError(f"support reaches dimension {self.max_dim} > {d}")
        out = [0] * d
        for j, n in self._pairs:
            out[j - 1] = n
        return tuple(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndex) and self._pairs == other._pairs

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        if not self._pairs:
            return "MultiIndex(0)"
        return "MultiIndex(" + ", ".join(f"{j}:{n}" for j, n in self._pairs) + ")"


def graded_key(nu: MultiIndex, d: int) -> tuple:
    """Sort key: total degree first, then descending dense lexicographic.

    Within one degree, ``(1, 0)`` precedes ``(0, 1)``.
    """
    return (nu.norm1, tuple(-n for n in nu.dense(d)))


@dataclass(frozen=True)
class WeightParams:
    """Generator of the per-dimension weights ``v_j`` plus the factor ``theta``.

    ``kind`` is one of ``constant``, ``polynomial``, ``exponential``,
    ``explicit``:

    * constant: ``v_j = beta`` for ``j <= max_dim`` (``v_j = inf`` afterwards
      when ``max_dim`` is given),
    * polynomial: ``v_j = c * j**alpha``,
    * exponential: ``v_j = beta**j``,
    * explicit: ``v_j = values[j-1]``, infinite past the end of the list.
    """

    kind: str
    beta: float = 1.0
    c: float = 1.0
    alpha: float = 0.0
    values: tuple[float, ...] = ()
    max_dim: int | None = None
    theta: float = SQRT2

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError(f"theta must be >= 1, got {self.theta}")
        if self.kind == "constant":
            if self.beta < 1:
                raise ValueError(f"constant weights need beta >= 1, got {self.beta}")
            if self.max_dim is not None and self.max_dim < 0:
                raise ValueError("max_dim must be nonnegative")
        elif self.kind == "polynomial":
            if self.c < 1 or self.alpha < 0:
                raise ValueError(
                    f"polynomial weights need c >= 1 and alpha >= 0, got c={self.c}, alpha={self.alpha}"
                )
        elif self.kind == "exponential":
            if self.beta < 1:
                raise ValueError(f"exponential weights need beta >= 1, got {self.beta}")
        elif self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", vals)
            if any(v < 1 for v in vals):
                raise ValueError("explicit weights must all be >= 1")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError("explicit weights must be nondecreasing")
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")

    @classmethod
    def constant(cls, beta: float, max_dim: int | None = None, theta: float = SQRT2):
        return cls("constant", beta=beta, max_dim=max_dim, theta=theta)

    @classmethod
    def polynomial(cls, c: float, alpha: float, theta: float = SQRT2):
        return cls("polynomial", c=c, alpha=alpha, theta=theta)

    @classmethod
    def exponential(cls, beta: float, theta: float = SQRT2):
        return cls("exponential", beta=beta, theta=theta)

    @classmethod
    def explicit(cls, values: Sequence[float], theta: float = SQRT2):
        return cls("explicit", values=tuple(values), theta=theta)

    @property
    def log2_theta(self) -> float:
        return math.log2(self.theta)

    @property
    def dim_limit(self) -> int | None:
        """Last dimension with a finite weight, ``None`` if unlimited."""
        if self.kind == "explicit":
            return len(self.values)
        if self.kind == "constant":
            return self.max_dim
        return None

    def log2_v(self, j: int) -> float:
        if j < 1:
            raise ValueError("dimension labels start at 1")
        limit = self.dim_limit
        if limit is not None and j > limit:
            return math.inf
        if self.kind == "constant":
            return math.log2(self.beta)
        if self.kind == "polynomial":
            return math.log2(self.c) + self.alpha * math.log2(j)
        if self.kind == "exponential":
            return j * math.log2(self.beta)
        return math.log2(self.values[j - 1])

    def v(self, j: int) -> float:
        lv = self.log2_v(j)
        return math.inf if lv == math.inf else 2.0**lv

    def is_unbounded_tail(self) -> bool:
        """True when ``v_j`` never grows past any finite threshold."""
        if self.dim_limit is not None:
            return False
        if self.kind == "constant":
            return True
        if self.kind == "polynomial":
            return self.alpha == 0
        return self.beta == 1  # exponential

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "theta": self.theta}
        if self.kind == "constant":
            out["beta"] = self.beta
            out["max_dim"] = self.max_dim
        elif self.kind == "polynomial":
            out.update(c=self.c, alpha=self.alpha)
        elif self.kind == "exponential":
            out["beta"] = self.beta
        else:
            out["values"] = list(self.values)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WeightParams":
        data = dict(data)
        kind = data.pop("kind")
        theta = float(data.pop("theta", SQRT2))
        allowed = {
            "constant": {"beta", "max_dim"},
            "polynomial": {"c", "alpha"},
            "exponential": {"beta"},
            "explicit": {"values"},
        }
        if kind not in allowed:
            raise ValueError(f"unknown weight kind {kind!r}")
        extra = set(data) - allowed[kind]
        if extra:
            raise ValueError(f"unknown key(s) for {kind} weights: {sorted(extra)}")
        if kind == "explicit":
            data["values"] = tuple(data.get("values", ()))
        return cls(kind, theta=theta, **data)


def log2_omega(nu: MultiIndex, w: WeightParams) -> float:
    """``log2`` of the product weight ``theta**||nu||_0 * prod v_j**nu_j``."""
    total = nu.norm0 * w.log2_theta
    for j, n in nu.pairs:
        total += n * w.log2_v(j)
    return total


def omega(nu: MultiIndex, w: WeightParams) -> float:
    lw = log2_omega(nu, w)
    if lw > 1023:
        raise OverflowError(f"weight overflow for {nu!r} (log2 omega = {lw:.1f})")
    return 2.0**lw


def _log2_budget(s: float) -> float:
    return math.log2(s / 2.0) + LOG_SLACK


def active_dimension(s: float, w: WeightParams) -> int:
    """Largest ``j`` whose single-exponent index ``e_j`` belongs to the set.

    For ``theta = sqrt(2)`` this is ``max{j : v_j <= sqrt(s/4)}``. Weights are
    nondecreasing, so the scan stops at the first failure.
    """
    if s <= 0:
        return 0
    budget = _log2_budget(s)
    first_cost = 2 * w.log2_theta
    if w.is_unbounded_tail():
        if first_cost + 2 * w.log2_v(1) <= budget:
            raise UnboundedIndexSetError(f"{w.kind} weights without a dimension limit")
        return 0
    if w.kind == "polynomial" and w.alpha > 0:
        # closed form gives the neighbourhood; the scan below settles rounding
        rhs = (budget - first_cost) / 2 - math.log2(w.c)
        j = max(int(2.0 ** (rhs / w.alpha)) - 2, 0) if rhs > 0 else 0
        while j >= 1 and first_cost + 2 * w.log2_v(j) > budget:
            j -= 1
    else:
        j = 0
    limit = w.dim_limit
    while limit is None or j < limit:
        if first_cost + 2 * w.log2_v(j + 1) > budget:
            break
        j += 1
    return j


@dataclass(frozen=True)
class IndexSet:
    """Ordered, duplicate-free collection of multi-indices with their budget."""

    indices: tuple[MultiIndex, ...]
    s: float
    weights: WeightParams

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicate multi-indices in index set")
        budget = _log2_budget(self.s)
        for nu in self.indices:
            if 2 * log2_omega(nu, self.weights) > budget:
                raise ValueError(f"{nu!r} violates omega^2 <= s/2 for s={self.s}")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.indices)

    def __getitem__(self, k: int) -> MultiIndex:
        return self.indices[k]

    def position(self, nu: MultiIndex) -> int:
        return self._positions()[nu]

    def _positions(self) -> dict:
        cache = self.__dict__.get("_pos")
        if cache is None:
            cache = {nu: k for k, nu in enumerate(self.indices)}
            object.__setattr__(self, "_pos", cache)
        return cache

    def __contains__(self, nu) -> bool:
        return nu in self._positions()

    @property
    def max_dim(self) -> int:
        return max((nu.max_dim for nu in self.indices), default=0)

    def max_degrees(self) -> list[int]:
        """Largest exponent used in each dimension ``1..max_dim``."""
        out = [0] * self.max_dim
        for nu in self.indices:
            for j, n in nu.pairs:
                out[j - 1] = max(out[j - 1], n)
        return out

    def omegas(self) -> np.ndarray:
        return np.array([omega(nu, self.weights) for nu in self.indices])

    def linf_norms(self) -> np.ndarray:
        """Sup norms ``2**(||nu||_0/2)`` of the tensorized Chebyshev columns."""
        return np.array([2.0 ** (nu.norm0 / 2) for nu in self.indices])

    def is_canonical(self) -> bool:
        d = self.max_dim
        keys = [graded_key(nu, d) for nu in self.indices]
        return all(a < b for a, b in zip(keys, keys[1:]))

    def to_json_dict(self) -> dict:
        return {
            "header": {
                "s": self.s,
                "weight_kind": self.weights.kind,
                "params": {k: v for k, v in self.weights.to_dict().items() if k not in ("kind", "theta")},
                "theta": self.weights.theta,
                "N": len(self),
            },
            "indices": [[list(p) for p in nu.pairs] for nu in self.indices],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), separators=(",", ":"))

    @classmethod
    def from_json_dict(cls, data: dict) -> "IndexSet":
        head = data["header"]
        w = WeightParams.from_dict({"kind": head["weight_kind"], "theta": head["theta"], **head["params"]})
        indices = tuple(MultiIndex(tuple(p) for p in entry) for entry in data["indices"])
        out = cls(indices, float(head["s"]), w)
        if not out.is_canonical():
            raise ValueError("index set is not in canonical graded order")
        return out

    @classmethod
    def from_json(cls, text: str) -> "IndexSet":
        return cls.from_json_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def enumerate_index_set(s: float, w: WeightParams) -> IndexSet:
    """Enumerate ``{nu : theta**(2||nu||_0) prod v_j**(2 nu_j) <= s/2}``.

    Depth-first over dimensions ``1..d`` with ``d = active_dimension(s, w)``.
    Because ``v_j`` is nondecreasing, a dimension that cannot take exponent 1
    cuts off every later dimension too.

    Raises
    ------
    UnboundedIndexSetError
        If the set is infinite (a weight equal to one, or constant weights
        without a dimension limit).
    """
    if s < 2:
        raise ValueError(f"sparsity budget must be >= 2, got {s}")
    d = active_dimension(s, w)
    budget = _log2_budget(s)
    step_theta = 2 * w.log2_theta
    log_v = [2 * w.log2_v(j) for j in range(1, d + 1)]
    for j, lv in enumerate(log_v, start=1):
        if lv == 0:
            raise UnboundedIndexSetError(f"v_{j} = 1 lets nu_{j} grow without bound")

    found: list[MultiIndex] = []
    # stack entries: (next dimension index 0-based, remaining budget, pairs so far)
    stack: list[tuple[int, float, tuple]] = [(0, budget, ())]
    while stack:
        j, remaining, head = stack.pop()
        if j >= d or step_theta + log_v[j] > remaining:
            found.append(MultiIndex(head))
            continue
        stack.append((j + 1, remaining, head))
        n = 1
        while step_theta + n * log_v[j] <= remaining:
            stack.append((j + 1, remaining - step_theta - n * log_v[j], head + ((j + 1, n),)))
            n += 1
    found.sort(key=lambda nu: graded_key(nu, d))
    return IndexSet(tuple(found), float(s), w)


def gamma_exact(L: float, b: Sequence[float]) -> int:
    """Count ``nu`` in ``N^k`` (all entries >= 1) with ``sum b_j nu_j <= L``."""
    b = [float(x) for x in b]
    if not b:
        raise ValueError("need k >= 1")
    if any(x <= 0 for x in b):
        raise ValueError("b must be positive")

    def count(rem: float, k: int) -> int:
        if k == 1:
            return max(int(math.floor(rem / b[0] + LOG_SLACK)), 0)
        bk = b[k - 1]
        total = 0
        nk = 1
        while bk * nk <= rem + LOG_SLACK:
            total += count(rem - bk * nk, k - 1)
            nk += 1
        return total

    if sum(b) > L + LOG_SLACK:
        return 0
    return count(float(L), len(b))


def gamma_bound(L: float, b: Sequence[float]) -> float:
    """Volume bound ``L**k / (k! prod b_j)`` for :func:`gamma_exact`."""
    k = len(b)
    if k == 0:
        raise ValueError("need k >= 1")
    return L**k / (math.factorial(k) * math.prod(b))


def index_set_size_bound(t: float, v: Sequence[float]) -> float:
    """Subset-sum upper bound on ``#{nu in N_0^d : 2**||nu||_0 prod v_j**(2nu_j) <= t}``.

    With ``a_j = 2 log2 v_j`` and ``A = log2 t`` this evaluates

        1 + sum_{k=1}^{min(d, floor A)} (A-k)**k / k!  *  sum_{|S|=k, sum_S a <= A-k} prod_S 1/a_l

    with the inner sum over subsets enumerated exactly.
    """
    v = [float(x) for x in v]
    if any(x <= 1 for x in v):
        raise ValueError("all weights must be > 1")
    if t < 1:
        raise ValueError("t must be >= 1")
    d = len(v)
    if d > MAX_SUBSET_DIM:
        raise ValueError(
            f"d = {d} exceeds {MAX_SUBSET_DIM} for exact subset enumeration; use corollary_bound instead"
        )
    a = sorted(2 * math.log2(x) for x in v)
    A = math.log2(t)
    kmax = min(d, int(math.floor(A + LOG_SLACK)))
    sums = [0.0] * (kmax + 1)

    # subsets in increasing-a order; partial+a[i] grows with i so we can break
    def walk(start: int, k: int, partial: float, prod_inv: float):
        for i in range(start, d):
            nk = k + 1
            if nk > kmax:
                return
            ps = partial + a[i]
            if ps > A - nk + LOG_SLACK:
                # larger a[i] and larger k only make this worse
                return
            pi = prod_inv / a[i]
            sums[nk] += pi
            walk(i + 1, nk, ps, pi)

    walk(0, 0, 0.0, 1.0)
    total = 1.0
    for k in range(1, kmax + 1):
        if sums[k]:
            total += (A - k) ** k / math.factorial(k) * sums[k]
    return total


# leading constant of the Stirling-based lower bound on K in the polynomial case
D1 = 1.1067


def corollary_bound(w: WeightParams, s: float) -> float:
    """Closed-form cardinality bounds for the three standard weight families.

    ``w`` selects the case: constant weights with ``max_dim`` (case a),
    polynomial ``c j**alpha`` (case b) or exponential ``beta**j`` (case c).
    For polynomial weights the value is the last explicit display of the
    proof, which dominates ``C s**(gamma log s)``; see
    :func:`polynomial_growth_exponent` for ``gamma``.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    A = math.log2(s / 2)
    if w.kind == "constant":
        if w.beta <= 1 or w.max_dim is None:
            raise ValueError("case (a) needs beta > 1 and a dimension limit")
        d = w.max_dim
        a = math.log2(w.beta**2)
        if d <= A / math.log2(2 * w.beta**2):
            return (A / a + 1) ** d
        return ((1 + 1 / a) * math.e * d) ** (A / math.log2(2 * w.beta**2))
    if w.kind == "polynomial":
        c, alpha = w.c, w.alpha
        if c <= 1 or alpha <= 0:
            raise ValueError("case (b) needs c > 1 and alpha > 0")
        if A <= 0:
            raise ValueError("case (b) needs s > 2")
        if _case_b_terms(A, c, alpha) < 4:
            raise ValueError(f"case (b) display only valid once four or more factors fit, not at s = {s}")
        inner = 2 ** (1 / alpha) * D1 * A
        if inner <= 1 or 1 + alpha * math.log2(D1 * A) <= 0:
            raise ValueError(f"case (b) display undefined for s = {s}")
        pre = (1 + alpha / math.log2(c)) * math.sqrt((1 + alpha * math.log2(D1 * A)) / (2 * math.pi * A))
        base = (
            math.e**2 * alpha * (s / (4 * c)) ** (1 / (2 * alpha)) / (2 * A)
            * math.log(inner) / math.log(2**alpha * c)
        )
        expo = A / math.log2(2 ** (alpha + 1) * c)
        return pre * base**expo
    if w.kind == "exponential":
        if w.beta <= 1:
            raise ValueError("case (c) needs beta > 1")
        if s <= 2:
            raise ValueError("case (c) needs s > 2")
        L = math.log(s / 2) / math.log(w.beta)
        r = math.sqrt(L)
        return 1 + (math.e**3 * r) ** r / (2 * math.pi * r)
    raise ValueError(f"no closed-form bound for {w.kind} weights")


def _case_b_terms(A: float, c: float, alpha: float) -> int:
    # largest k with 2 alpha log2(k!) <= A - k (1 + 2 log2 c)
    k, lf = 0, 0.0
    while True:
        nxt = lf + math.log2(k + 1)
        if 2 * alpha * nxt > A - (k + 1) * (1 + 2 * math.log2(c)):
            return k
        k, lf = k + 1, nxt


def polynomial_growth_exponent(c: float, alpha: float) -> float:
    """Leading ``gamma`` in ``C s**(gamma log s)`` for polynomial weights.

    Comes from ``(s**(1/(2 alpha)))**(log2(s/2)/log2(2**(alpha+1) c))``.
    """
    return 1.0 / (2 * alpha * math.log(2 ** (alpha + 1) * c))


def brute_force_count(t: float, v: Sequence[float], theta: float = SQRT2) -> int:
    """Count ``J_d(t, v)`` with nested loops over exponents; reference for small ``d``."""
    lv = [2 * math.log2(x) for x in v]
    lt = 2 * math.log2(theta)
    A = math.log2(t) + LOG_SLACK

    def count(j: int, used: float) -> int:
        if j == len(lv):
            return 1
        total = count(j + 1, used)
        n = 1
        while used + lt + n * lv[j] <= A:
            total += count(j + 1, used + lt + n * lv[j])
            n += 1
        return total

    return count(0, 0.0) if A >= 0 else 0
