"""The density family, its score, and the tensor quadrature oracle.

Members are densities on R^n of the form

    p_theta(x) = h(x) exp(<theta, T(x)>) / Z_theta,
    h(x) = exp(-sum_i x_i^{d+1}),

where T stacks the monomials of degree 1..d (graded-lex order, see
``polybasis``), d is odd, and theta lives in the sup-norm box of radius B.
The partition function Z_theta is computed by composite tensor-product
Gauss-Legendre quadrature, restricted to n <= 3 where the tensor rule is an
auditable ground truth.  All density work is done in log space; integrals are
accumulated with a streaming log-sum-exp so that inverse temperatures up to
1e7 in the hardness experiments stay inside double range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate

from .polybasis import MonomialBasis, enumerate_basis, eval_jacobian, eval_suffstats
from .reports import BoundCheck

__all__ = [
    "ParamVector",
    "QuadratureGrid",
    "zero_params",
    "random_params",
    "param_to_json",
    "param_from_json",
    "log_unnormalized_density",
    "score",
    "build_grid",
    "log_partition",
    "Moments",
    "moments",
    "quad_log_integral",
    "quad_expectation",
    "convergence_gap",
    "auto_radius",
    "family_radius",
    "default_grid",
    "family_grid",
    "tail_radius",
    "moment_bound",
    "verify_int_concentration",
    "verify_1d_moment_bound",
    "DEFAULT_POINTS_PER_AXIS",
]

# Grid resolution defaults by dimension; chosen so that doubling
# points_per_axis moves log_partition by less than 1e-8 on desk-scale members.
DEFAULT_POINTS_PER_AXIS = {1: 400, 2: 200, 3: 120}

# Fixed reduction chunk: the streaming accumulators below are deterministic
# only because every run visits identical chunks in identical order.
_CHUNK_NODES = 1 << 16


@dataclass(frozen=True)
class ParamVector:
    """A family member: coefficient vector theta on basis, box radius B."""

    basis: MonomialBasis
    theta: np.ndarray
    B: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.basis.size,):
            raise ValueError(
                f"theta has shape {theta.shape}, basis needs ({self.basis.size},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if self.B < 1:
            raise ValueError(f"box radius must satisfy B >= 1, got {self.B}")
        if theta.size and np.max(np.abs(theta)) > self.B * (1 + 1e-9):
            raise ValueError(
                f"theta outside the box: max|theta| = {np.max(np.abs(theta))} > B = {self.B}"
            )
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def d(self) -> int:
        return self.basis.d


def zero_params(n: int, d: int, B: float = 1.0) -> ParamVector:
    basis = enumerate_basis(n, d)
    return ParamVector(basis, np.zeros(basis.size), B)


def random_params(n: int, d: int, B: float, seed: int) -> ParamVector:
    """theta drawn uniformly from the box of radius B."""
    basis = enumerate_basis(n, d)
    rng = np.random.default_rng(seed)
    return ParamVector(basis, rng.uniform(-B, B, size=basis.size), B)


def param_to_json(p: ParamVector) -> dict:
    return {"n": p.n, "d": p.d, "B": p.B, "theta": [float(v) for v in p.theta]}


def param_from_json(obj: dict) -> ParamVector:
    basis = enumerate_basis(int(obj["n"]), int(obj["d"]))
    return ParamVector(basis, np.asarray(obj["theta"], dtype=float), float(obj["B"]))


# ---------------------------------------------------------------------------
# density and score


def _check_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def log_unnormalized_density(p: ParamVector, x) -> np.ndarray | float:
    """log h(x) + <theta, T(x)>; the log partition is deliberately excluded."""
    arr = _check_points(x)
    single = arr.ndim <= 1
    xb = arr.reshape(1, -1) if single else arr
    # points far enough out to overflow x^{d+1} have zero density; the base
    # measure's degree beats every statistic, so map any non-finite to -inf
    with np.errstate(over="ignore", invalid="ignore"):
        logh = -np.sum(xb ** (p.d + 1), axis=1)
        vals = logh + eval_suffstats(p.basis, xb) @ p.theta
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    return float(vals[0]) if single else vals


def score(p: ParamVector, x) -> np.ndarray:
    """Gradient in x of the log density; free of the partition function."""
    arr = _check_points(x)
    single = arr.ndim <= 1
    xb = arr.reshape(1, -1) if single else arr
    drift = -(p.d + 1) * xb**p.d + np.einsum("ski,k->si", eval_jacobian(p.basis, xb), p.theta)
    return drift[0] if single else drift


# ---------------------------------------------------------------------------
# quadrature grids


@lru_cache(maxsize=None)
def _leggauss(k: int) -> tuple[np.ndarray, np.ndarray]:
    u, w = np.polynomial.legendre.leggauss(k)
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


@dataclass(frozen=True)
class QuadratureGrid:
    """Composite tensor-product Gauss-Legendre rule on [-R, R]^n."""

    n: int
    radius: float
    points_per_axis: int
    axis_nodes: np.ndarray
    axis_logw: np.ndarray
    panels: tuple[tuple[float, float], ...]
    refine_near: tuple[float, ...]
    refine_width: float

    @property
    def total_nodes(self) -> int:
        return self.points_per_axis**self.n

    def iter_chunks(self, chunk: int = _CHUNK_NODES) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (points (k, n), log weights (k,)) blocks in a fixed order."""
        shape = (self.points_per_axis,) * self.n
        for lo in range(0, self.total_nodes, chunk):
            flat = np.arange(lo, min(lo + chunk, self.total_nodes))
            axes = np.unravel_index(flat, shape)
            X = np.column_stack([self.axis_nodes[ix] for ix in axes])
            logw = self.axis_logw[axes[0]].copy()
            for ix in axes[1:]:
                logw += self.axis_logw[ix]
            yield X, logw

    def doubled(self) -> "QuadratureGrid":
        return build_grid(
            self.n,
            self.radius,
            2 * self.points_per_axis,
            refine_near=self.refine_near or None,
            refine_width=self.refine_width,
        )

    def spec(self) -> dict:
        return {
            "R": self.radius,
            "points": self.points_per_axis,
            "panels": [list(p) for p in self.panels],
        }


def build_grid(
    n: int,
    radius: float,
    points_per_axis: int,
    refine_near: Sequence[float] | None = None,
    refine_width: float = 1.0,
) -> QuadratureGrid:
    """Composite Gauss-Legendre rule, optionally refined near given abscissae.

    Refinement inserts a panel of width ``refine_width`` centered at each
    listed point plus geometrically nested guard panels around it, so sharply
    peaked integrands (peak scale 1/sqrt(beta), pass refine_width =
    min(1, 1/sqrt(beta))) are resolved without exploding the node count.
    """
    if n < 1 or n > 3:
        raise ValueError(f"quadrature oracle supports 1 <= n <= 3, got n={n}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if refine_width <= 0:
        raise ValueError("refine_width must be positive")
    breaks = {-radius, radius}
    for a in refine_near or ():
        for off in (0.5 * refine_width, 2 * refine_width, 8 * refine_width, 32 * refine_width):
            for b in (a - off, a + off):
                if -radius < b < radius:
                    breaks.add(float(b))
    pts = sorted(breaks)
    merged = [pts[0]]
    for b in pts[1:]:
        if b - merged[-1] > 1e-9 * max(1.0, radius):
            merged.append(b)
    if merged[-1] != radius:
        merged[-1] = radius
    panels = tuple((merged[i], merged[i + 1]) for i in range(len(merged) - 1))
    P = len(panels)
    if points_per_axis < 3 * P:
        raise ValueError(
            f"points_per_axis={points_per_axis} too small for {P} panels (need >= {3 * P})"
        )
    counts = np.full(P, points_per_axis // P, dtype=int)
    widths = np.array([hi - lo for lo, hi in panels])
    for j in np.argsort(-widths, kind="stable")[: points_per_axis % P]:
        counts[j] += 1
    nodes, logw = [], []
    for (lo, hi), k in zip(panels, counts):
        u, w = _leggauss(int(k))
        half = 0.5 * (hi - lo)
        nodes.append(0.5 * (lo + hi) + half * u)
        logw.append(np.log(w * half))
    axis_nodes = np.concatenate(nodes)
    axis_logw = np.concatenate(logw)
    axis_nodes.setflags(write=False)
    axis_logw.setflags(write=False)
    return QuadratureGrid(
        n=n,
        radius=float(radius),
        points_per_axis=int(points_per_axis),
        axis_nodes=axis_nodes,
        axis_logw=axis_logw,
        panels=panels,
        refine_near=tuple(refine_near or ()),
        refine_width=float(refine_width),
    )


# ---------------------------------------------------------------------------
# streaming log-space reductions


class _LogAccumulator:
    """Streaming log-sum-exp with optional weighted sums, deterministic."""

    def __init__(self, shapes: Sequence[tuple[int, ...]] = ()):
        self.m = -math.inf
        self.z = 0.0
        self.sums = [np.zeros(s) for s in shapes]

    def add(self, logvals: np.ndarray, arrays: Sequence[np.ndarray] = ()):
        m_c = float(np.max(logvals)) if logvals.size else -math.inf
        if m_c == -math.inf:
            return
        if m_c > self.m:
            scale = math.exp(self.m - m_c) if self.m > -math.inf else 0.0
            self.z *= scale
            for s in self.sums:
                s *= scale
            self.m = m_c
        w = np.exp(logvals - self.m)
        self.z += float(np.sum(w))
        for s, a in zip(self.sums, arrays):
            s += np.tensordot(w, a, axes=(0, 0))

    @property
    def log_integral(self) -> float:
        if self.z <= 0.0 or self.m == -math.inf:
            raise ValueError("integrand underflowed to zero at every grid node")
        return self.m + math.log(self.z)

    def means(self) -> list[np.ndarray]:
        if self.z <= 0.0:
            raise ValueError("integrand underflowed to zero at every grid node")
        return [s / self.z for s in self.sums]


def quad_log_integral(grid: QuadratureGrid, logf: Callable[[np.ndarray], np.ndarray]) -> float:
    """log of integral of exp(logf) over the grid's box."""
    acc = _LogAccumulator()
    for X, logw in grid.iter_chunks():
        acc.add(logw + logf(X))
    return acc.log_integral


def quad_expectation(
    grid: QuadratureGrid,
    logf: Callable[[np.ndarray], np.ndarray],
    fns: Sequence[Callable[[np.ndarray], np.ndarray]],
) -> tuple[float, list[np.ndarray]]:
    """(log integral, expectations of each fn under the normalized density)."""
    probe = np.zeros((1, grid.n))
    shapes = [np.asarray(fn(probe)).shape[1:] for fn in fns]
    acc = _LogAccumulator(shapes)
    for X, logw in grid.iter_chunks():
        acc.add(logw + logf(X), [np.asarray(fn(X), dtype=float) for fn in fns])
    return acc.log_integral, acc.means()


# ---------------------------------------------------------------------------
# partition function and moments


def _check_grid(p: ParamVector, grid: QuadratureGrid):
    if grid.n != p.n:
        raise ValueError(f"grid dimension {grid.n} != family dimension {p.n}")


def log_partition(p: ParamVector, grid: QuadratureGrid) -> float:
    """log Z_theta by composite Gauss-Legendre quadrature."""
    _check_grid(p, grid)
    return quad_log_integral(grid, lambda X: log_unnormalized_density(p, X))


@dataclass(frozen=True)
class Moments:
    mean_T: np.ndarray
    second_T: np.ndarray
    log_partition: float


def moments(p: ParamVector, grid: QuadratureGrid) -> Moments:
    """Quadrature E[T] and E[T T^t] under p_theta; mean_T = grad_theta log Z."""
    _check_grid(p, grid)
    M1 = p.basis.size
    m, z = -math.inf, 0.0
    sT = np.zeros(M1)
    sTT = np.zeros((M1, M1))
    for X, logw in grid.iter_chunks():
        ell = logw + log_unnormalized_density(p, X)
        m_c = float(np.max(ell))
        if m_c == -math.inf:
            continue
        if m_c > m:
            scale = math.exp(m - m_c) if m > -math.inf else 0.0
            z *= scale
            sT *= scale
            sTT *= scale
            m = m_c
        w = np.exp(ell - m)
        T = eval_suffstats(p.basis, X)
        z += float(np.sum(w))
        sT += w @ T
        sTT += (T * w[:, None]).T @ T
    if z <= 0.0:
        raise ValueError("integrand underflowed to zero at every grid node")
    second = sTT / z
    return Moments(
        mean_T=sT / z,
        second_T=0.5 * (second + second.T),
        log_partition=m + math.log(z),
    )


def convergence_gap(p: ParamVector, grid: QuadratureGrid) -> tuple[float, bool]:
    """|log Z(grid) - log Z(doubled grid)| and whether it clears the 1e-8 gate."""
    delta = abs(log_partition(p, grid) - log_partition(p, grid.doubled()))
    return delta, delta < 1e-8


# ---------------------------------------------------------------------------
# radius selection


def auto_radius(
    p: ParamVector,
    points_per_axis: int = 96,
    start: float = 2.0,
    growth: float = 1.5,
    rtol: float = 1e-12,
) -> float:
    """Smallest probe radius at which log Z has stopped changing.

    Grows the box geometrically until two consecutive radii agree to rtol;
    the base measure's exp(-x^{d+1}) tails make the remainder monotone, so
    agreement certifies the tail mass is below resolution.  Node spacing is
    held fixed as the box grows, otherwise resolution loss at large R mimics
    tail mass and the search overshoots.  Capped at the (astronomically
    loose) analytic tail radius.
    """
    cap = tail_radius(p.n, p.d, p.B)
    R = min(start, cap)
    prev = None
    while True:
        ppa = max(points_per_axis, math.ceil(points_per_axis * R / start))
        lz = log_partition(p, build_grid(p.n, R, ppa))
        if prev is not None and abs(lz - prev) <= rtol * max(1.0, abs(lz)):
            return R
        prev = lz
        if R >= cap:
            return R
        R = min(R * growth, cap)


def family_radius(basis: MonomialBasis, B: float, points_per_axis: int = 96) -> float:
    """Radius covering the whole box: probes theta = 0 and the +-B corners."""
    corners = [
        np.zeros(basis.size),
        np.full(basis.size, float(B)),
        np.full(basis.size, -float(B)),
    ]
    return max(
        auto_radius(ParamVector(basis, t, B), points_per_axis=points_per_axis)
        for t in corners
    )


def default_grid(p: ParamVector, points_per_axis: int | None = None, radius: float | None = None) -> QuadratureGrid:
    """Grid sized for this member: auto radius, per-dimension default points."""
    if points_per_axis is None:
        points_per_axis = DEFAULT_POINTS_PER_AXIS[p.n]
    if radius is None:
        radius = auto_radius(p)
    return build_grid(p.n, radius, points_per_axis)


def family_grid(basis: MonomialBasis, B: float, points_per_axis: int | None = None) -> QuadratureGrid:
    """Grid valid across the whole parameter box (used by iterative fits)."""
    if points_per_axis is None:
        points_per_axis = DEFAULT_POINTS_PER_AXIS[basis.n]
    return build_grid(basis.n, family_radius(basis, B), points_per_axis)


# ---------------------------------------------------------------------------
# analytic tail and moment bounds


def tail_radius(n: int, d: int, B: float) -> float:
    """Radius outside which the family keeps at most half its mass."""
    M = math.comb(n + d, d)
    return 2.0 ** (d + 3) * n * B * M


def moment_bound(ell: int, n: int, d: int, B: float) -> float:
    """Upper bound on E[x_i^ell] for any member of the (n, d, B) family."""
    if ell < 1:
        raise ValueError("moment order must be >= 1")
    M = math.comb(n + d, d)
    return max(2.0 * float(ell) ** ell, B**ell * float(M) ** ell * 2.0 ** (ell * (d + 1) + 1))


# ---------------------------------------------------------------------------
# 1-D well concentration (the scalar integrals behind the hardness analysis)


def _well_integral(beta: float, lo: float, hi: float, k: int = 0) -> float:
    """integral of x^k exp(-x^8 - beta (1-x^2)^2) over [lo, hi]."""

    def g(x):
        return x**k * math.exp(-(x**8) - beta * (1.0 - x * x) ** 2)

    inner = [t for t in (1.0,) if lo < t < hi]
    val, _ = integrate.quad(g, lo, hi, points=inner or None, limit=300, epsabs=0.0, epsrel=1e-11)
    return val


def verify_int_concentration(beta: float, r: float, m: int) -> BoundCheck:
    """Check that the positive-axis mass concentrates in [1-r, 1+r].

    Compares I = integral over (0, inf) of exp(-x^8 - beta(1-x^2)^2) against
    (1 + 1/m) times the same integral restricted to [1-r, 1+r].  Valid only
    in the parameter regime beta > 150, 6/beta < r < 0.04, and
    beta >= 40 r^-2 log(4m/r), where the inequality is a theorem.
    """
    if beta <= 150:
        raise ValueError(f"need beta > 150, got {beta}")
    if not (6.0 / beta < r < 0.04):
        raise ValueError(f"need r in (6/beta, 0.04) = ({6.0 / beta}, 0.04), got {r}")
    if m < 1:
        raise ValueError("m must be a positive integer")
    if beta < 40.0 * r**-2 * math.log(4.0 * m / r):
        raise ValueError(
            f"need beta >= 40 r^-2 log(4m/r) = {40.0 * r**-2 * math.log(4.0 * m / r):.6g}, got {beta}"
        )
    window = _well_integral(beta, 1.0 - r, 1.0 + r)
    # beyond 3, exp(-x^8) alone is below 1e-2800: identically zero in doubles
    total = _well_integral(beta, 0.0, 1.0 - r) + window + _well_integral(beta, 1.0 + r, 3.0)
    rhs = (1.0 + 1.0 / m) * window
    return BoundCheck(
        name="integral_concentration",
        lhs=total,
        rhs=rhs,
        holds=bool(total <= rhs),
        note=f"beta={beta:.6g}, r={r}, m={m}",
    )


def verify_1d_moment_bound(beta: float, k_max: int = 8) -> list[BoundCheck]:
    """Check integral x^k e^{-f} <= 2^k integral e^{-f} on (0, inf), k <= k_max."""
    if beta < 160.0 * math.log(8.0):
        raise ValueError(f"need beta >= 160 log 8 = {160.0 * math.log(8.0):.6g}, got {beta}")
    if not 1 <= k_max <= 8:
        raise ValueError("k_max must be in 1..8")

    def full(k):
        return (
            _well_integral(beta, 0.0, 0.5, k)
            + _well_integral(beta, 0.5, 1.5, k)
            + _well_integral(beta, 1.5, 3.0, k)
        )

    base = full(0)
    checks = []
    for k in range(1, k_max + 1):
        lhs = full(k)
        rhs = 2.0**k * base
        checks.append(
            BoundCheck(
                name=f"well_moment_k{k}",
                lhs=lhs,
                rhs=rhs,
                holds=bool(lhs <= rhs),
                note=f"beta={beta:.6g}",
            )
        )
    return checks
