"""Fisher information, the restricted Poincare constant, and bound audits.

The Fisher matrix here is the covariance of the sufficient statistics,
I(theta) = E[T T^t] - E[T] E[T]^t, computed either from the quadrature oracle
or from samples.  The restricted Poincare constant is the largest generalized
eigenvalue of the pencil (I, G) with G = E[(JT)(JT)^t]: for f = <w, T>,
Var f = w^t I w and E|grad f|^2 = w^t G w, so the Rayleigh quotient of the
pencil is exactly the variance-to-Dirichlet ratio the constant maximizes.

verify_bounds audits seven inequalities tying these quantities to explicit
functions of (n, d, B); the variance lower bound's denominator overflows
doubles long before the desk scale is left, so that check compares logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .expfam import ParamVector, QuadratureGrid, convergence_gap, log_unnormalized_density, moments, quad_expectation
from .polybasis import PolyCoeffs, eval_jacobian, eval_laplacian, eval_suffstats, monomial_norm
from .reports import BoundCheck
from .sampler import SampleSet

__all__ = [
    "SpectralReport",
    "fisher_info",
    "gram_matrix",
    "restricted_poincare",
    "sm_moment_inputs",
    "regularity_preflight",
    "gamma_bound",
    "verify_bounds",
    "clip_spectrum",
]

_CLIP_TOL = 1e-10


@dataclass(frozen=True)
class SpectralReport:
    """Spectral summary of one family member plus the audited checks.

    lambda_min > 0 is deliberately not enforced here: deciding it is check
    (iv)'s job, and fault-injected reports must be representable.
    """

    lambda_min: float
    lambda_max: float
    C_P: float
    gamma_bound: float
    checks: list[BoundCheck] = field(default_factory=list)

    def __post_init__(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min exceeds lambda_max")

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.checks)


def clip_spectrum(w: np.ndarray, tol: float = _CLIP_TOL) -> tuple[np.ndarray, str | None]:
    """Clip eigenvalues in [-tol, 0) to 0; anything more negative is a bug."""
    w = np.asarray(w, dtype=float)
    if w.min() < -tol:
        raise ValueError(
            f"eigenvalue {w.min():.3e} below -{tol:.0e}: not quadrature roundoff, refusing to clip"
        )
    note = None
    if (w < 0).any():
        note = f"clipped {int((w < 0).sum())} eigenvalue(s) in [-{tol:.0e}, 0) to 0"
        w = np.maximum(w, 0.0)
    return w, note


def _check_gate(p: ParamVector, grid: QuadratureGrid):
    delta, ok = convergence_gap(p, grid)
    if not ok:
        raise ValueError(f"quadrature gate failed: doubling the grid moves log Z by {delta:.3e}")


def fisher_info(p: ParamVector, source, check: bool = True) -> np.ndarray:
    """Covariance of T under p, from a grid or a SampleSet."""
    if isinstance(source, SampleSet):
        if source.n != p.n:
            raise ValueError("sample dimension mismatch")
        M1 = p.basis.size
        s1 = np.zeros(M1)
        s2 = np.zeros((M1, M1))
        for lo in range(0, source.N, 1 << 16):
            T = eval_suffstats(p.basis, source.data[lo : lo + (1 << 16)])
            s1 += T.sum(axis=0)
            s2 += T.T @ T
        mean = s1 / source.N
        I = s2 / source.N - np.outer(mean, mean)
    else:
        if check:
            _check_gate(p, source)
        mom = moments(p, source)
        I = mom.second_T - np.outer(mom.mean_T, mom.mean_T)
    return 0.5 * (I + I.T)


def _node_chunk(M1: int) -> int:
    # keep the per-chunk (nodes, M1, M1) workspaces near 128 MB
    return max(1024, (1 << 24) // (M1 * M1))


def gram_matrix(p: ParamVector, source, check: bool = False) -> np.ndarray:
    """E[(JT)(JT)^t] under p, from a grid or a SampleSet."""
    M1 = p.basis.size
    if isinstance(source, SampleSet):
        if source.n != p.n:
            raise ValueError("sample dimension mismatch")
        G = np.zeros((M1, M1))
        for lo in range(0, source.N, _node_chunk(M1)):
            J = eval_jacobian(p.basis, source.data[lo : lo + _node_chunk(M1)])
            G += np.einsum("ski,sli->kl", J, J)
        G /= source.N

        return 0.5 * (G + G.T)
    if check:
        _check_gate(p, source)

    def jt_gram(X):
        J = eval_jacobian(p.basis, X)
        return np.einsum("ski,sli->skl", J, J)

    _, (G,) = quad_expectation(
        source, lambda X: log_unnormalized_density(p, X), [jt_gram]
    )
    return 0.5 * (G + G.T)


def restricted_poincare(I: np.ndarray, G: np.ndarray, basis=None, return_witness: bool = False):
    """Largest generalized eigenvalue of the SPD pencil (I, G).

    Solved by Cholesky of G followed by a symmetric eigendecomposition (what
    LAPACK's sygvd does), which ties directly to the Rayleigh quotient
    max_w (w^t I w)/(w^t G w).
    """
    I = 0.5 * (np.asarray(I, float) + np.asarray(I, float).T)
    G = 0.5 * (np.asarray(G, float) + np.asarray(G, float).T)
    w = np.linalg.eigvalsh(G)
    if w[0] <= w[-1] * 1e-12:
        _, V = np.linalg.eigh(G)
        null = w <= max(w[-1], 0.0) * 1e-12
        if basis is not None:
            names = np.array(basis.monomial_names())
            dirs = ", ".join(sorted(set(names[np.any(np.abs(V[:, null]) > 1e-8, axis=1)])))
        else:
            dirs = ", ".join(str(i) for i in np.nonzero(np.any(np.abs(V[:, null]) > 1e-8, axis=1))[0])
        raise ValueError(f"gradient Gram matrix is singular along directions {dirs}")
    vals, vecs = linalg.eigh(I, G)
    C_P = float(vals[-1])
    if return_witness:
        return C_P, vecs[:, -1]
    return C_P


def sm_moment_inputs(p: ParamVector, source, check: bool = False) -> dict:
    """E[op-norm(JT)^4] and E[|Laplacian T|^2] under p (quadrature or samples)."""

    def opnorm4(X):
        J = eval_jacobian(p.basis, X)
        A = np.einsum("ski,skj->sij", J, J)
        return np.linalg.eigvalsh(A)[:, -1] ** 2

    def lap2(X):
        L = eval_laplacian(p.basis, X)
        return np.sum(L * L, axis=1)

    if isinstance(source, SampleSet):
        tot4 = tot2 = 0.0
        for lo in range(0, source.N, 1 << 16):
            X = source.data[lo : lo + (1 << 16)]
            tot4 += float(np.sum(opnorm4(X)))
            tot2 += float(np.sum(lap2(X)))
        return {"E_opJT4": tot4 / source.N, "E_dT2": tot2 / source.N}
    if check:
        _check_gate(p, source)
    _, (m4, m2) = quad_expectation(
        source, lambda X: log_unnormalized_density(p, X), [opnorm4, lap2]
    )
    return {"E_opJT4": float(m4), "E_dT2": float(m2)}


def regularity_preflight(p: ParamVector, grid: QuadratureGrid) -> dict:
    """The SM covariance claim's moment conditions, evaluated by quadrature."""

    def gradlogh4(X):
        g2 = (p.d + 1) ** 2 * np.sum(X ** (2 * p.d), axis=1)
        return g2 * g2

    _, (g4,) = quad_expectation(
        grid, lambda X: log_unnormalized_density(p, X), [gradlogh4]
    )
    out = sm_moment_inputs(p, grid)
    out["E_gradlogh4"] = float(g4)
    if not all(math.isfinite(v) for v in out.values()):
        raise ValueError(f"regularity preflight found non-finite moments: {out}")
    return out


def gamma_bound(p: ParamVector, C_P: float, lambda_min: float, moment_inputs: dict) -> float:
    """2 C_P^2 (|theta|^2 E[op(JT)^4] + E[|Lap T|^2]) / lambda_min^2."""
    if lambda_min <= 0:
        raise ValueError(f"need lambda_min > 0, got {lambda_min}")
    th2 = float(p.theta @ p.theta)
    return (
        2.0
        * C_P**2
        * (th2 * moment_inputs["E_opJT4"] + moment_inputs["E_dT2"])
        / lambda_min**2
    )


# ---------------------------------------------------------------------------
# the seven-check audit


def _log_var_lb_denominator(n: int, d: int, B: float) -> float:
    """log of 2^{2d}(d+1)^{2d}(4e)^{d+1} M^{2d+3} R^{2d^2+2d} (n+B)^{2d}."""
    M = math.comb(n + d, d)
    R = 2.0 ** (d + 3) * n * B * M
    return (
        2 * d * math.log(2.0)
        + 2 * d * math.log(d + 1.0)
        + (d + 1) * math.log(4.0 * math.e)
        + (2 * d + 3) * math.log(M)
        + (2 * d * d + 2 * d) * math.log(R)
        + 2 * d * math.log(n + B)
    )


def verify_bounds(
    p: ParamVector,
    grid: QuadratureGrid,
    corrupt: str | None = None,
    seed: int = 0,
    n_poly: int = 100,
) -> SpectralReport:
    """Audit checks (i)-(vii) for one family member.

    corrupt="fisher" negates the largest Fisher eigenvalue before the audit,
    a fault injection that must surface as check (iv) failing (and normally
    drags (vii) down with it); anything else passed to corrupt is an error.
    """
    if corrupt not in (None, "fisher"):
        raise ValueError(f"unknown corruption {corrupt!r}")
    _check_gate(p, grid)
    n, d, B = p.n, p.d, p.B
    M = math.comb(n + d, d)
    mom = moments(p, grid)
    I = mom.second_T - np.outer(mom.mean_T, mom.mean_T)
    I = 0.5 * (I + I.T)
    w, V = np.linalg.eigh(I)
    notes_iv = []
    if corrupt == "fisher":
        w = np.sort(np.concatenate([-w[-1:], w[:-1]]))
        I = (V * w) @ V.T
        notes_iv.append("fault injection: corrupt='fisher' negated the top eigenvalue")
    else:
        w, clip_note = clip_spectrum(w)
        if clip_note:
            notes_iv.append(clip_note)
    lam_min, lam_max = float(w[0]), float(w[-1])

    cap_i = B ** (2 * d) * float(M) ** (2 * d + 1) * 2.0 ** (2 * d * (d + 1) + 1)
    meanT2 = float(mom.mean_T @ mom.mean_T)
    cap_ii = B ** (2 * d) * float(M) ** (2 * d + 2) * 2.0 ** (2 * d * (d + 1) + 1)
    aux = sm_moment_inputs(p, grid)
    lap2 = aux["E_dT2"]
    cap_iii = d**4 * B ** (2 * d) * float(M) ** (2 * d + 1) * 2.0 ** (2 * d * (d + 1) + 1)

    checks = [
        BoundCheck("i_lambda_max_ub", lam_max, cap_i, lam_max <= cap_i),
        BoundCheck("ii_mean_T_ub", meanT2, cap_ii, meanT2 <= cap_ii),
        BoundCheck("iii_laplacian_ub", lap2, cap_iii, lap2 <= cap_iii),
        BoundCheck("iv_lambda_min_pos", 0.0, lam_min, lam_min > 0.0,
                   "; ".join(notes_iv) if notes_iv else "strict inequality"),
    ]

    # (v): explicit variance lower bound, worst margin over random polynomials
    rng = np.random.default_rng(seed)
    log_den = _log_var_lb_denominator(n, d, B)
    worst_margin = math.inf
    worst = (0.0, 0.0)
    ok_v = True
    for _ in range(n_poly):
        wvec = rng.standard_normal(p.basis.size)
        f = PolyCoeffs.make(n, {idx: c for idx, c in zip(p.basis.indices, wvec)})
        log_lhs = 2.0 * math.log(monomial_norm(f)) - log_den
        var = float(wvec @ I @ wvec)
        if var <= 0:
            ok_v = False
            worst, worst_margin = (math.exp(log_lhs), var), -math.inf
            break
        margin = math.log(var) - log_lhs
        if margin < worst_margin:
            worst_margin = margin
            worst = (math.exp(log_lhs) if log_lhs > -745.0 else 0.0, var)
        ok_v = ok_v and margin >= 0
    checks.append(
        BoundCheck("v_variance_lb", worst[0], worst[1], ok_v,
                   f"{n_poly} random constant-free polynomials; worst log-margin {worst_margin:.3g}")
    )

    # (vi): Var(<w,T>) equals w^t I w, recomputed by scalar quadrature
    worst_diff = 0.0
    for _ in range(5):
        wvec = rng.standard_normal(p.basis.size)

        def wt(X, wvec=wvec):
            return eval_suffstats(p.basis, X) @ wvec

        _, (m1, m2) = quad_expectation(
            grid, lambda X: log_unnormalized_density(p, X), [wt, lambda X: wt(X) ** 2]
        )
        worst_diff = max(worst_diff, abs((float(m2) - float(m1) ** 2) - float(wvec @ I @ wvec)))
    checks.append(
        BoundCheck("vi_variance_identity", worst_diff, 1e-8, worst_diff <= 1e-8,
                   "max |scalar-quadrature Var - w^t I w| over 5 random w")
    )

    # (vii): Poincare conditioning bound
    G = gram_matrix(p, grid)
    C_P = restricted_poincare(I, G, basis=p.basis)
    cap_vii = (4.0 + 4.0 * meanT2) * lam_max / min(1.0, lam_min) if lam_min != 0 else math.inf
    holds_vii = lam_min > 0 and C_P <= cap_vii
    checks.append(BoundCheck("vii_poincare_cond", C_P, cap_vii, holds_vii))

    gamma = gamma_bound(p, C_P, lam_min, aux) if lam_min > 0 else math.inf
    return SpectralReport(
        lambda_min=lam_min,
        lambda_max=lam_max,
        C_P=C_P,
        gamma_bound=gamma,
        checks=checks,
    )
