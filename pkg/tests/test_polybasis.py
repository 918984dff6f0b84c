"""Tests for the monomial basis, sparse polynomials, norms, and Legendre basis."""

import math

import numpy as np
import pytest

from polyscore.polybasis import (
    PolyCoeffs,
    check_mon_l2_bound,
    enumerate_basis,
    eval_jacobian,
    eval_laplacian,
    eval_suffstats,
    format_monomial,
    from_legendre,
    graded_indices,
    l2_cube_inner,
    l2_cube_norm,
    legendre_1d,
    legendre_indices,
    legendre_tensor,
    monomial_norm,
    poly_from_json,
    poly_to_json,
    to_legendre,
)


class TestEnumerateBasis:
    def test_counts_match_binomial(self):
        for n in range(1, 7):
            for d in (1, 3, 5, 7):
                basis = enumerate_basis(n, d)
                assert basis.size == math.comb(n + d, d) - 1

    def test_graded_lex_order_n2(self):
        basis = enumerate_basis(2, 3)
        expected_prefix = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        assert basis.indices[:5] == expected_prefix
        assert basis.size == 9

    def test_n2_d1_listing(self):
        assert enumerate_basis(2, 1).indices == [(1, 0), (0, 1)]

    def test_no_duplicates_no_constant(self):
        basis = enumerate_basis(3, 5)
        idx = basis.indices
        assert len(set(idx)) == len(idx)
        assert all(1 <= sum(ix) <= 5 for ix in idx)

    def test_even_degree_rejected(self):
        with pytest.raises(ValueError):
            enumerate_basis(2, 2)

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            enumerate_basis(0, 3)
        with pytest.raises(ValueError):
            enumerate_basis(2, 0)
        with pytest.raises(ValueError):
            enumerate_basis(2, -1)


class TestEvaluation:
    def test_powers_of_two(self):
        basis = enumerate_basis(1, 3)
        np.testing.assert_allclose(eval_suffstats(basis, [2.0]), [2.0, 4.0, 8.0])

    def test_linear_stats(self):
        basis = enumerate_basis(2, 1)
        np.testing.assert_allclose(eval_suffstats(basis, [3.0, 4.0]), [3.0, 4.0])

    def test_sign_pattern_degree_two_block(self):
        basis = enumerate_basis(2, 3)
        vals = eval_suffstats(basis, [1.0, -1.0])
        np.testing.assert_allclose(vals[:5], [1.0, -1.0, 1.0, -1.0, 1.0])

    def test_batch_matches_single(self):
        basis = enumerate_basis(3, 3)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(11, 3))
        batch = eval_suffstats(basis, X)
        for i in range(11):
            np.testing.assert_allclose(batch[i], eval_suffstats(basis, X[i]))

    def test_dimension_mismatch(self):
        basis = enumerate_basis(2, 1)
        with pytest.raises(ValueError):
            eval_suffstats(basis, [1.0, 2.0, 3.0])

    def test_jacobian_product_rule_row(self):
        basis = enumerate_basis(2, 3)
        J = eval_jacobian(basis, [3.0, 4.0])
        row = basis.indices.index((1, 1))
        np.testing.assert_allclose(J[row], [4.0, 3.0])

    def test_jacobian_power_rule_row(self):
        basis = enumerate_basis(2, 3)
        J = eval_jacobian(basis, [2.0, 0.0])
        row = basis.indices.index((3, 0))
        np.testing.assert_allclose(J[row], [12.0, 0.0])

    def test_jacobian_constant_for_linear_basis(self):
        basis = enumerate_basis(1, 1)
        for x in (-2.0, 0.0, 1.7):
            np.testing.assert_allclose(eval_jacobian(basis, [x]), [[1.0]])

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        h = 1e-6
        for n in (1, 2, 3):
            for d in (1, 3):
                basis = enumerate_basis(n, d)
                for _ in range(12):
                    x = rng.uniform(-1.5, 1.5, size=n)
                    J = eval_jacobian(basis, x)
                    for i in range(n):
                        e = np.zeros(n)
                        e[i] = h
                        fd = (eval_suffstats(basis, x + e) - eval_suffstats(basis, x - e)) / (2 * h)
                        np.testing.assert_allclose(J[:, i], fd, rtol=1e-6, atol=1e-7)

    def test_laplacian_cubic(self):
        basis = enumerate_basis(1, 3)
        L = eval_laplacian(basis, [2.0])
        assert L[basis.indices.index((3,))] == pytest.approx(12.0)

    def test_laplacian_cross_term_vanishes(self):
        basis = enumerate_basis(2, 3)
        rng = np.random.default_rng(3)
        row = basis.indices.index((1, 1))
        for _ in range(5):
            x = rng.normal(size=2)
            assert eval_laplacian(basis, x)[row] == 0.0

    def test_laplacian_zero_for_linear_basis(self):
        basis = enumerate_basis(2, 1)
        np.testing.assert_array_equal(eval_laplacian(basis, [0.3, -0.7]), [0.0, 0.0])

    def test_laplacian_matches_hessian_trace(self):
        rng = np.random.default_rng(23)
        h = 1e-4
        for n, d in ((1, 3), (2, 3), (3, 3)):
            basis = enumerate_basis(n, d)
            for _ in range(8):
                x = rng.uniform(-1.2, 1.2, size=n)
                lap = eval_laplacian(basis, x)
                trace = np.zeros(basis.size)
                for i in range(n):
                    e = np.zeros(n)
                    e[i] = h
                    trace += (
                        eval_suffstats(basis, x + e)
                        - 2 * eval_suffstats(basis, x)
                        + eval_suffstats(basis, x - e)
                    ) / h**2
                np.testing.assert_allclose(lap, trace, rtol=1e-5, atol=1e-4)

    def test_monomial_lipschitz_on_sup_ball(self):
        # |x^idx(u) - x^idx(v)| <= d R^{d-1} ||u - v||_inf on ||.||_inf <= R
        rng = np.random.default_rng(7)
        for R in (1.0, 2.0, 10.0):
            for _ in range(40):
                n = int(rng.integers(1, 4))
                d = int(rng.choice([1, 3, 5]))
                basis = enumerate_basis(n, d)
                u = rng.uniform(-R, R, size=n)
                v = rng.uniform(-R, R, size=n)
                gap = np.abs(eval_suffstats(basis, u) - eval_suffstats(basis, v))
                bound = d * R ** (d - 1) * np.max(np.abs(u - v))
                assert np.all(gap <= bound * (1 + 1e-12) + 1e-12)


class TestPolyCoeffs:
    def test_zero_coefficients_dropped(self):
        f = PolyCoeffs.make(2, {(1, 0): 0.0, (0, 1): 2.0})
        assert (1, 0) not in f.terms
        assert f.terms == {(0, 1): 2.0}

    def test_degree_of_zero_poly(self):
        assert PolyCoeffs.zero(3).degree == 0

    def test_arithmetic_agrees_with_pointwise(self):
        rng = np.random.default_rng(11)
        idx_pool = graded_indices(2, 3)
        for _ in range(10):
            pick = rng.choice(len(idx_pool), size=4, replace=False)
            f = PolyCoeffs.make(2, {idx_pool[i]: rng.normal() for i in pick})
            pick = rng.choice(len(idx_pool), size=4, replace=False)
            g = PolyCoeffs.make(2, {idx_pool[i]: rng.normal() for i in pick})
            X = rng.normal(size=(7, 2))
            np.testing.assert_allclose((f + g).evaluate(X), f.evaluate(X) + g.evaluate(X))
            np.testing.assert_allclose(
                (f * g).evaluate(X), f.evaluate(X) * g.evaluate(X), rtol=1e-12, atol=1e-12
            )
            np.testing.assert_allclose(
                f.power(3).evaluate(X), f.evaluate(X) ** 3, rtol=1e-11, atol=1e-11
            )
            np.testing.assert_allclose((-2.5 * f).evaluate(X), -2.5 * f.evaluate(X))

    def test_json_round_trip(self):
        f = PolyCoeffs.make(3, {(2, 0, 1): -0.75, (0, 0, 0): 3.0, (1, 1, 1): 1e-3})
        g = poly_from_json(poly_to_json(f))
        assert g.n == f.n
        assert g.terms == f.terms

    def test_format_monomial(self):
        assert format_monomial((2, 0, 1)) == "x1^2*x3"
        assert format_monomial((0, 0)) == "1"
        assert format_monomial((1,)) == "x1"


class TestNorms:
    def test_monomial_norm_three_four_five(self):
        f = PolyCoeffs.make(2, {(1, 0): 3.0, (0, 1): 4.0})
        assert monomial_norm(f) == pytest.approx(5.0)

    def test_monomial_norm_zero(self):
        assert monomial_norm(PolyCoeffs.zero(2)) == 0.0

    def test_monomial_norm_unit_pair(self):
        f = PolyCoeffs.make(2, {(2, 1): 1.0, (0, 1): -1.0})
        assert monomial_norm(f) == pytest.approx(math.sqrt(2))

    def test_l2_cube_norm_linear(self):
        f = PolyCoeffs.make(1, {(1,): 1.0})
        assert l2_cube_norm(f) == pytest.approx(math.sqrt(1.0 / 3.0))

    def test_l2_cube_norm_constant(self):
        assert l2_cube_norm(PolyCoeffs.constant(2, 1.0)) == pytest.approx(1.0)

    def test_l2_cube_norm_cross_term(self):
        f = PolyCoeffs.make(2, {(1, 1): 1.0})
        assert l2_cube_norm(f) == pytest.approx(1.0 / 3.0)

    def test_inner_product_matches_quadrature(self):
        # independent oracle: tensor Gauss-Legendre, exact for these degrees
        rng = np.random.default_rng(29)
        nodes, weights = np.polynomial.legendre.leggauss(10)
        idx_pool = graded_indices(2, 4)
        for _ in range(10):
            pick = rng.choice(len(idx_pool), size=5, replace=False)
            f = PolyCoeffs.make(2, {idx_pool[i]: rng.normal() for i in pick})
            pick = rng.choice(len(idx_pool), size=5, replace=False)
            g = PolyCoeffs.make(2, {idx_pool[i]: rng.normal() for i in pick})
            X1, X2 = np.meshgrid(nodes, nodes, indexing="ij")
            P = np.column_stack([X1.ravel(), X2.ravel()])
            W = np.outer(weights, weights).ravel() / 4.0  # uniform probability
            quad = float(W @ (f.evaluate(P) * g.evaluate(P)))
            assert l2_cube_inner(f, g) == pytest.approx(quad, rel=1e-12, abs=1e-12)


class TestLegendre:
    def test_low_degrees_match_closed_forms(self):
        assert legendre_1d(0).terms == {(0,): 1.0}
        assert legendre_1d(1).terms == {(1,): 1.0}
        L2 = legendre_1d(2)
        assert L2.terms[(2,)] == pytest.approx(1.5)
        assert L2.terms[(0,)] == pytest.approx(-0.5)

    def test_matches_numpy_legendre_coefficients(self):
        for k in range(8):
            ours = legendre_1d(k)
            coeffs = np.zeros(k + 1)
            coeffs[k] = 1.0
            ref = np.polynomial.legendre.leg2poly(coeffs)
            for e, c in enumerate(ref):
                assert ours.terms.get((e,), 0.0) == pytest.approx(c, rel=1e-12, abs=1e-12)

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            legendre_1d(-1)

    def test_uniform_orthonormality_univariate(self):
        polys = [legendre_1d(k, normalization="uniform") for k in range(8)]
        for j in range(8):
            for k in range(8):
                want = 1.0 if j == k else 0.0
                assert l2_cube_inner(polys[j], polys[k]) == pytest.approx(want, abs=1e-10)

    def test_lebesgue_normalization_halves_uniform_norm(self):
        for k in range(6):
            L = legendre_1d(k, normalization="lebesgue")
            assert l2_cube_inner(L, L) == pytest.approx(0.5, abs=1e-12)

    def test_uniform_orthonormality_tensor(self):
        idx = legendre_indices(2, 3)
        polys = [legendre_tensor(ix) for ix in idx]
        gram = np.array([[l2_cube_inner(p, q) for q in polys] for p in polys])
        np.testing.assert_allclose(gram, np.eye(len(idx)), atol=1e-10)

    def test_to_legendre_constant(self):
        b = to_legendre(PolyCoeffs.constant(2, 1.0), d=2)
        assert b[0] == pytest.approx(1.0)
        np.testing.assert_allclose(b[1:], 0.0, atol=1e-14)

    def test_to_legendre_linear(self):
        b = to_legendre(PolyCoeffs.make(1, {(1,): 1.0}), d=1)
        np.testing.assert_allclose(b, [0.0, 1.0 / math.sqrt(3)], atol=1e-14)

    def test_parseval_identity(self):
        rng = np.random.default_rng(31)
        idx_pool = graded_indices(2, 3)
        for _ in range(10):
            f = PolyCoeffs.make(2, {ix: rng.uniform(-1, 1) for ix in idx_pool})
            b = to_legendre(f, d=3)
            assert float(b @ b) == pytest.approx(l2_cube_norm(f) ** 2, abs=1e-10)

    def test_round_trip(self):
        rng = np.random.default_rng(37)
        for n, d in ((1, 5), (2, 4), (3, 3), (1, 7)):
            idx_pool = graded_indices(n, d)
            f = PolyCoeffs.make(n, {ix: rng.uniform(-1, 1) for ix in idx_pool})
            g = from_legendre(to_legendre(f, d=d), n, d)
            for ix in idx_pool:
                assert g.terms.get(ix, 0.0) == pytest.approx(f.terms.get(ix, 0.0), abs=1e-9)

    def test_degree_overflow_rejected(self):
        f = PolyCoeffs.make(1, {(3,): 1.0})
        with pytest.raises(ValueError):
            to_legendre(f, d=2)


class TestMonL2Bound:
    def test_linear_example(self):
        f = PolyCoeffs.make(1, {(1,): 1.0})
        report = check_mon_l2_bound(f, n=1, d=1)
        assert report.lhs == pytest.approx(1.0)
        assert report.rhs == pytest.approx(2 * 4 * math.e / 3.0)
        assert report.holds

    def test_zero_polynomial(self):
        assert check_mon_l2_bound(PolyCoeffs.zero(2), n=2, d=3).holds

    def test_random_polynomials(self):
        rng = np.random.default_rng(41)
        for _ in range(300):
            n = int(rng.integers(1, 4))
            d = int(rng.integers(1, 6))
            idx_pool = graded_indices(n, d)
            f = PolyCoeffs.make(n, {ix: rng.uniform(-1, 1) for ix in idx_pool})
            assert check_mon_l2_bound(f, n, d).holds

    def test_extremal_ratio_stays_below_bound(self):
        # The worst case over all f is 1/lambda_min of the cube moment Gram
        # of the monomials; verify that even the extremizer satisfies the
        # bound, which subsumes every randomized trial.
        def moment(k):
            return 0.0 if k % 2 else 1.0 / (k + 1)

        for n in (1, 2, 3):
            for d in (1, 2, 3, 4, 5):
                idx = graded_indices(n, d)
                K = len(idx)
                gram = np.empty((K, K))
                for a in range(K):
                    for b in range(K):
                        gram[a, b] = math.prod(
                            moment(idx[a][i] + idx[b][i]) for i in range(n)
                        )
                vals, vecs = np.linalg.eigh(gram)
                bound = math.comb(n + d, d) * (4 * math.e) ** d
                assert 1.0 / vals[0] <= bound
                f = PolyCoeffs.make(n, dict(zip(idx, vecs[:, 0])))
                assert check_mon_l2_bound(f, n, d).holds
