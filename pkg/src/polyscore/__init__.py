"""Estimation and hardness experiments for exponential families whose log
density is a bounded-degree polynomial.

Subpackages:
    polybasis   monomial bases, sparse polynomials, cube norms, Legendre basis
    expfam      the density, its score, and the quadrature oracle
    sampler     exact separable sampling and MALA
    estimators  closed-form score matching, quadrature-backed MLE, rate studies
    fisher      Fisher information, restricted Poincare constant, bound checks
    hardness    CNF-to-density encoding and its desk-scale verification
    cli         command-line entry point
"""

__version__ = "0.1.0"
