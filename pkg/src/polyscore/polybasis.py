"""Monomial bases on R^n, sparse polynomial arithmetic, and cube norms.

Everything downstream parametrizes log densities by their coefficients on the
monomials of total degree 1..d in n variables.  This module owns that
coordinate system: deterministic enumeration of the multi-indices, batched
evaluation of the monomial vector T(x) together with its Jacobian and
Laplacian, sparse polynomials for constructions that stay far below the full
basis size, and the two polynomial norms (Euclidean norm of the coefficient
vector, L2 norm under the uniform measure on [-1,1]^n) together with the
comparison inequality between them.

Multi-indices are plain tuples of nonnegative ints.  The basis order is
graded lexicographic: ascending total degree, and within a degree block the
index whose leading variables carry the higher exponents comes first, so for
n=2, d=3 the order starts x1, x2, x1^2, x1*x2, x2^2, x1^3, ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np

from .reports import BoundCheck

MultiIndex = tuple[int, ...]

__all__ = [
    "MultiIndex",
    "MonomialBasis",
    "PolyCoeffs",
    "enumerate_basis",
    "eval_suffstats",
    "eval_jacobian",
    "eval_laplacian",
    "monomial_norm",
    "l2_cube_inner",
    "l2_cube_norm",
    "legendre_1d",
    "legendre_tensor",
    "legendre_indices",
    "to_legendre",
    "from_legendre",
    "check_mon_l2_bound",
    "format_monomial",
    "poly_to_json",
    "poly_from_json",
]


# ---------------------------------------------------------------------------
# multi-index enumeration


def _compositions(total: int, n: int) -> Iterator[MultiIndex]:
    """All exponent tuples of length n summing to total, leading-heavy first."""
    if n == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, n - 1):
            yield (head,) + rest


def graded_indices(n: int, d: int, min_total: int = 0) -> list[MultiIndex]:
    """Multi-indices with min_total <= |idx| <= d in graded-lex order."""
    out: list[MultiIndex] = []
    for total in range(min_total, d + 1):
        out.extend(_compositions(total, n))
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """The monomials of total degree 1..d in n variables, graded-lex ordered.

    ``degrees`` has one row per monomial; row k holds the exponent of each
    variable in the k-th sufficient statistic T_k.  The constant monomial is
    excluded, it is not an identifiable direction of the family.
    """

    n: int
    d: int
    degrees: np.ndarray  # (size, n) int64, read-only

    @property
    def size(self) -> int:
        """Number of monomials, C(n+d, d) - 1."""
        return self.degrees.shape[0]

    @property
    def indices(self) -> list[MultiIndex]:
        return [tuple(int(v) for v in row) for row in self.degrees]

    def monomial_names(self) -> list[str]:
        return [format_monomial(tuple(row)) for row in self.degrees]


@lru_cache(maxsize=None)
def _cached_basis(n: int, d: int) -> MonomialBasis:
    degrees = np.array(graded_indices(n, d, min_total=1), dtype=np.int64)
    degrees.setflags(write=False)
    return MonomialBasis(n=n, d=d, degrees=degrees)


def enumerate_basis(n: int, d: int) -> MonomialBasis:
    """All multi-indices with 1 <= |idx| <= d, graded-lex ordered.

    d must be odd: the family's base measure exp(-sum x_i^{d+1}) is only
    integrable when d+1 is even.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got n={n}")
    if d < 1 or d % 2 == 0:
        raise ValueError(f"degree must be odd and positive, got d={d}")
    return _cached_basis(n, d)


# ---------------------------------------------------------------------------
# batched evaluation of T, JT, Laplacian(T)


def _as_batch(x, n: int) -> tuple[np.ndarray, bool]:
    """Coerce x to shape (N, n); returns (batch, was_single_point)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ValueError(f"point has dimension {arr.shape[0]}, basis has n={n}")
        return arr.reshape(1, n), True
    if arr.ndim == 2:
        if arr.shape[1] != n:
            raise ValueError(f"points have dimension {arr.shape[1]}, basis has n={n}")
        return arr, False
    raise ValueError(f"expected a point or a batch of points, got shape {arr.shape}")


def _power_table(xb: np.ndarray, dmax: int) -> np.ndarray:
    """P[s, i, e] = x_s[i]**e for e = 0..dmax."""
    N, n = xb.shape
    P = np.empty((N, n, dmax + 1))
    P[:, :, 0] = 1.0
    for e in range(1, dmax + 1):
        P[:, :, e] = P[:, :, e - 1] * xb
    return P


def _monomials_from_table(P: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Evaluate x^deg for each degree row; P is a power table."""
    vals = P[:, 0, degrees[:, 0]]
    for i in range(1, degrees.shape[1]):
        vals = vals * P[:, i, degrees[:, i]]
    return vals


def eval_suffstats(basis: MonomialBasis, x) -> np.ndarray:
    """T(x): component for index idx equals prod_i x_i^{idx(i)}.

    Accepts a single point (shape (n,)) or a batch (shape (N, n)); the output
    has a matching leading shape.
    """
    xb, single = _as_batch(x, basis.n)
    T = _monomials_from_table(_power_table(xb, basis.d), basis.degrees)
    return T[0] if single else T


def eval_jacobian(basis: MonomialBasis, x) -> np.ndarray:
    """JT(x), shape (M-1, n): entry (k, i) is d T_k / d x_i."""
    xb, single = _as_batch(x, basis.n)
    P = _power_table(xb, basis.d)
    N = xb.shape[0]
    J = np.empty((N, basis.size, basis.n))
    for i in range(basis.n):
        expo = basis.degrees.copy()
        ci = expo[:, i].copy()
        expo[:, i] = np.maximum(ci - 1, 0)
        J[:, :, i] = ci * _monomials_from_table(P, expo)
    return J[0] if single else J


def eval_laplacian(basis: MonomialBasis, x) -> np.ndarray:
    """Laplacian of each T_k: sum_i idx(i)(idx(i)-1) x^{idx - 2 e_i}."""
    xb, single = _as_batch(x, basis.n)
    P = _power_table(xb, basis.d)
    N = xb.shape[0]
    L = np.zeros((N, basis.size))
    for i in range(basis.n):
        ci = basis.degrees[:, i]
        mask = ci >= 2
        if not mask.any():
            continue
        expo = basis.degrees[mask].copy()
        expo[:, i] -= 2
        L[:, mask] += (ci[mask] * (ci[mask] - 1)) * _monomials_from_table(P, expo)
    return L[0] if single else L


def format_monomial(degrees: Iterable[int]) -> str:
    parts = []
    for i, e in enumerate(degrees):
        if e == 1:
            parts.append(f"x{i + 1}")
        elif e > 1:
            parts.append(f"x{i + 1}^{e}")
    return "*".join(parts) if parts else "1"


# ---------------------------------------------------------------------------
# sparse polynomials


@dataclass(frozen=True)
class PolyCoeffs:
    """Sparse polynomial: map from exponent tuple to coefficient.

    Zero coefficients are never stored.  Instances are immutable; arithmetic
    returns new objects.  Use :meth:`make` so term maps are normalized.
    """

    n: int
    terms: Mapping[MultiIndex, float]

    @classmethod
    def make(cls, n: int, terms: Mapping[MultiIndex, float]) -> "PolyCoeffs":
        if n < 1:
            raise ValueError(f"need n >= 1, got n={n}")
        clean: dict[MultiIndex, float] = {}
        for idx, c in terms.items():
            idx = tuple(int(e) for e in idx)
            if len(idx) != n or any(e < 0 for e in idx):
                raise ValueError(f"bad exponent tuple {idx} for n={n}")
            c = float(c)
            if c != 0.0:
                clean[idx] = c
        return cls(n=n, terms=clean)

    @classmethod
    def zero(cls, n: int) -> "PolyCoeffs":
        return cls.make(n, {})

    @classmethod
    def constant(cls, n: int, c: float) -> "PolyCoeffs":
        return cls.make(n, {(0,) * n: c})

    @property
    def degree(self) -> int:
        return max((sum(idx) for idx in self.terms), default=0)

    @property
    def constant_term(self) -> float:
        return self.terms.get((0,) * self.n, 0.0)

    def __add__(self, other: "PolyCoeffs") -> "PolyCoeffs":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        out = dict(self.terms)
        for idx, c in other.terms.items():
            out[idx] = out.get(idx, 0.0) + c
        return PolyCoeffs.make(self.n, out)

    def __neg__(self) -> "PolyCoeffs":
        return PolyCoeffs.make(self.n, {idx: -c for idx, c in self.terms.items()})

    def __sub__(self, other: "PolyCoeffs") -> "PolyCoeffs":
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, PolyCoeffs):
            if self.n != other.n:
                raise ValueError("dimension mismatch")
            out: dict[MultiIndex, float] = {}
            for ia, ca in self.terms.items():
                for ib, cb in other.terms.items():
                    idx = tuple(a + b for a, b in zip(ia, ib))
                    out[idx] = out.get(idx, 0.0) + ca * cb
            return PolyCoeffs.make(self.n, out)
        return PolyCoeffs.make(self.n, {idx: float(other) * c for idx, c in self.terms.items()})

    __rmul__ = __mul__

    def power(self, k: int) -> "PolyCoeffs":
        if k < 0:
            raise ValueError("negative power")
        out = PolyCoeffs.constant(self.n, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def evaluate(self, x) -> np.ndarray | float:
        """Evaluate at a point (n,) or batch (N, n)."""
        xb, single = _as_batch(x, self.n)
        if not self.terms:
            vals = np.zeros(xb.shape[0])
        else:
            degrees = np.array(list(self.terms.keys()), dtype=np.int64)
            coeffs = np.array(list(self.terms.values()))
            P = _power_table(xb, int(degrees.max()))
            vals = _monomials_from_table(P, degrees) @ coeffs
        return float(vals[0]) if single else vals


def poly_to_json(f: PolyCoeffs) -> dict:
    """Serialize: comma-joined degree strings to coefficients, plus {n, d}."""
    terms = {",".join(str(e) for e in idx): c for idx, c in f.terms.items()}
    return {"n": f.n, "d": f.degree, "terms": dict(sorted(terms.items()))}


def poly_from_json(obj: Mapping) -> PolyCoeffs:
    terms = {
        tuple(int(tok) for tok in key.split(",")): float(c)
        for key, c in obj["terms"].items()
    }
    return PolyCoeffs.make(int(obj["n"]), terms)


# ---------------------------------------------------------------------------
# norms


def monomial_norm(f: PolyCoeffs) -> float:
    """Euclidean norm of the coefficient vector (constant term included)."""
    return math.sqrt(sum(c * c for c in f.terms.values()))


def l2_cube_inner(f: PolyCoeffs, g: PolyCoeffs) -> float:
    """E[f(x) g(x)] for x uniform on [-1,1]^n, via exact moments.

    E[x^k] = 1/(k+1) for even k and 0 for odd k, applied per coordinate to
    each product of terms.
    """
    if f.n != g.n:
        raise ValueError("dimension mismatch")
    acc = 0.0
    for ia, ca in f.terms.items():
        for ib, cb in g.terms.items():
            prod = ca * cb
            for a, b in zip(ia, ib):
                k = a + b
                if k % 2:
                    prod = 0.0
                    break
                prod /= k + 1
            acc += prod
    return acc


def l2_cube_norm(f: PolyCoeffs) -> float:
    """L2 norm of f under the uniform probability measure on [-1,1]^n."""
    return math.sqrt(max(l2_cube_inner(f, f), 0.0))


# ---------------------------------------------------------------------------
# Legendre basis
#
# L_k is expanded from the closed product form
#     L_k(x) = 2^{-k} sum_j C(k,j)^2 (x-1)^{k-j} (x+1)^j .
# Two unit normalizations are in play and must not be confused:
#   * 'lebesgue': sqrt((2k+1)/2) L_k integrates to one against dx on [-1,1];
#   * 'uniform':  sqrt(2k+1) L_k has unit L2 norm under the uniform
#     probability measure on [-1,1], the measure l2_cube_norm uses.
# The tensorized change of basis below uses 'uniform' so that the Legendre
# coefficient vector of f satisfies sum b^2 = l2_cube_norm(f)^2 exactly.


def legendre_1d(k: int, normalization: str = "none") -> PolyCoeffs:
    """Univariate Legendre polynomial L_k (optionally normalized)."""
    if k < 0:
        raise ValueError("negative Legendre degree")
    xm1 = PolyCoeffs.make(1, {(0,): -1.0, (1,): 1.0})
    xp1 = PolyCoeffs.make(1, {(0,): 1.0, (1,): 1.0})
    acc = PolyCoeffs.zero(1)
    for j in range(k + 1):
        acc = acc + float(math.comb(k, j) ** 2) * (xm1.power(k - j) * xp1.power(j))
    L = (0.5**k) * acc
    if normalization == "none":
        return L
    if normalization == "lebesgue":
        return math.sqrt((2 * k + 1) / 2.0) * L
    if normalization == "uniform":
        return math.sqrt(2 * k + 1) * L
    raise ValueError(f"unknown normalization {normalization!r}")


def _embed_axis(p1d: PolyCoeffs, n: int, axis: int) -> PolyCoeffs:
    terms = {}
    for (e,), c in p1d.terms.items():
        idx = [0] * n
        idx[axis] = e
        terms[tuple(idx)] = c
    return PolyCoeffs.make(n, terms)


def legendre_tensor(index: MultiIndex, normalization: str = "uniform") -> PolyCoeffs:
    """Product of per-axis Legendre factors for the given multi-index."""
    n = len(index)
    out = PolyCoeffs.constant(n, 1.0)
    for axis, k in enumerate(index):
        if k:  # the k=0 factor is 1 under every normalization here
            out = out * _embed_axis(legendre_1d(k, normalization), n, axis)
    return out


def legendre_indices(n: int, d: int) -> list[MultiIndex]:
    """Index set of the degree-<=d tensor Legendre basis (constant included)."""
    return graded_indices(n, d, min_total=0)


def to_legendre(f: PolyCoeffs, d: int | None = None) -> np.ndarray:
    """Coefficients of f over the uniform-orthonormal tensor Legendre basis.

    Entry order follows legendre_indices(f.n, d).  Orthonormality gives the
    Parseval identity sum b^2 = l2_cube_norm(f)^2.
    """
    if d is None:
        d = f.degree
    if f.degree > d:
        raise ValueError(f"degree {f.degree} exceeds requested d={d}")
    return np.array(
        [l2_cube_inner(f, legendre_tensor(idx)) for idx in legendre_indices(f.n, d)]
    )


def from_legendre(coeffs, n: int, d: int) -> PolyCoeffs:
    """Inverse of to_legendre."""
    idx = legendre_indices(n, d)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (len(idx),):
        raise ValueError(f"expected {len(idx)} coefficients, got shape {coeffs.shape}")
    out = PolyCoeffs.zero(n)
    for b, ix in zip(coeffs, idx):
        if b:
            out = out + float(b) * legendre_tensor(ix)
    return out


# ---------------------------------------------------------------------------
# coefficient norm vs cube L2 norm


def check_mon_l2_bound(f: PolyCoeffs, n: int, d: int) -> BoundCheck:
    """Check monomial_norm(f)^2 <= C(n+d,d) (4e)^d l2_cube_norm(f)^2.

    The inequality is universal over polynomials of degree at most d, so
    ``holds`` should be true for every valid input.
    """
    if f.n != n:
        raise ValueError("dimension mismatch")
    if f.degree > d:
        raise ValueError(f"degree {f.degree} exceeds d={d}")
    lhs = monomial_norm(f) ** 2
    rhs = math.comb(n + d, d) * (4 * math.e) ** d * l2_cube_norm(f) ** 2
    return BoundCheck(
        name="monomial_vs_cube_l2",
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs <= rhs * (1 + 1e-12)),
    )
