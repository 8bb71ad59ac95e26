import numpy as np
import pytest
from hypothesis import given, strategies as st

from npiv.numerics import Grid1D
from npiv.regularization import (FilterParams, LinearizedSystem, PenaltySpace, SpectralCalculus, filter_g,
                                 filter_r, iterated_tikhonov, propagation_constant, spectral_solve_check)

lams = st.floats(0.0, 1e6)
alphas = st.floats(1e-6, 1e3)
ms = st.integers(1, 6)


def scalar_system(T=2.0, target=1.0):
    return LinearizedSystem(np.array([[T]]), np.array([-target]), np.zeros(1), np.ones(1), np.eye(1))


def random_system(rng, rows, cols):
    T = rng.standard_normal((rows, cols)) / np.arange(1, cols + 1)
    grid = Grid1D(0.0, 1.0, cols)
    return LinearizedSystem(T, rng.standard_normal(rows), rng.standard_normal(cols),
                            rng.uniform(0.5, 2.0, rows), PenaltySpace("H1").gram(grid))


class TestFilters:
    @pytest.mark.parametrize("lam,alpha,m,g", [(1, 1, 1, 0.5), (0, 2, 3, 1.5), (4, 1, 2, 0.24)])
    def test_g_examples(self, lam, alpha, m, g):
        assert filter_g(lam, FilterParams(alpha, m)) == pytest.approx(g, abs=1e-12)

    def test_r_example(self):
        assert filter_r(4.0, FilterParams(1.0, 2)) == pytest.approx(0.04)

    @given(lams, alphas, ms)
    def test_identity(self, lam, alpha, m):
        p = FilterParams(alpha, m)
        assert lam * filter_g(lam, p) + filter_r(lam, p) == pytest.approx(1.0, abs=1e-12)

    @given(lams, alphas, ms)
    def test_bounds(self, lam, alpha, m):
        p = FilterParams(alpha, m)
        r, g = filter_r(lam, p), filter_g(lam, p)
        assert 0.0 <= r <= 1.0
        assert 0.0 <= g <= m / alpha * (1 + 1e-12)

    @given(st.floats(0, 1e3), st.floats(1e-3, 10), alphas, ms)
    def test_monotone(self, lam, dl, alpha, m):
        p = FilterParams(alpha, m)
        assert filter_r(lam + dl, p) <= filter_r(lam, p)
        assert filter_g(lam + dl, p) <= filter_g(lam, p) * (1 + 1e-12)

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.1, 3.0), ms)
    def test_qualification(self, lam, alpha, mu, m):
        # lam**mu r_alpha(lam) <= alpha**mu for mu <= m
        if mu <= m:
            assert lam ** mu * filter_r(lam, FilterParams(alpha, m)) <= alpha ** mu * (1 + 1e-9)

    def test_small_lambda_continuity(self):
        p = FilterParams(0.3, 4)
        assert filter_g(1e-14, p) == pytest.approx(filter_g(0.0, p), rel=1e-9)

    def test_vectorized(self):
        out = filter_g(np.array([0.0, 1.0, 4.0]), FilterParams(1.0, 2))
        assert out.shape == (3,)

    def test_propagation_constant(self):
        # sup over lam of alpha lam g^2 for one step is 1/4 at lam = alpha
        assert propagation_constant(1) == pytest.approx(0.25, abs=1e-9)
        lam = np.logspace(-6, 6, 20001)
        for m in (2, 3):
            brute = np.max(lam * filter_g(lam, FilterParams(1.0, m)) ** 2)
            assert propagation_constant(m) == pytest.approx(brute, rel=1e-5)
            assert propagation_constant(m) <= m

    @pytest.mark.parametrize("bad", [dict(alpha=0.0), dict(alpha=-1.0), dict(alpha=1.0, m=0), dict(alpha=1.0, m=1.5)])
    def test_invalid_params(self, bad):
        with pytest.raises(ValueError):
            FilterParams(**bad)

    def test_penalty_space(self):
        assert PenaltySpace("l2").kind == "L2"
        with pytest.raises(ValueError):
            PenaltySpace("H2")
        with pytest.raises(ValueError):
            PenaltySpace("H1", "upwind")


class TestIteratedTikhonov:
    @pytest.mark.parametrize("m,expected", [(1, 0.4), (2, 0.48)])
    def test_scalar(self, m, expected):
        assert iterated_tikhonov(scalar_system(), FilterParams(1.0, m))[0] == pytest.approx(expected)

    def test_huge_alpha_returns_start(self):
        rng = np.random.default_rng(0)
        sys = random_system(rng, 8, 5)
        out = iterated_tikhonov(sys, FilterParams(1e12, 3))
        assert np.allclose(out, sys.start, atol=1e-8)

    def test_m1_is_classical_tikhonov(self):
        rng = np.random.default_rng(1)
        s = random_system(rng, 9, 6)
        alpha = 0.07
        W = np.diag(s.image_weights)
        A = s.T.T @ W @ s.T + alpha * s.gram
        expected = np.linalg.solve(A, -s.T.T @ W @ s.c + alpha * s.gram @ s.start)
        assert np.allclose(iterated_tikhonov(s, FilterParams(alpha, 1)), expected, rtol=1e-10)

    def test_diagonal_operator(self):
        sig = np.array([1.0, 0.5, 0.1])
        sys = LinearizedSystem(np.diag(sig), -np.ones(3), np.zeros(3), np.ones(3), np.eye(3))
        p = FilterParams(0.2, 3)
        out = iterated_tikhonov(sys, p)
        lam = sig ** 2
        assert np.allclose(out, filter_g(lam, p) * sig, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_spectral_route(self, seed):
        rng = np.random.default_rng(seed)
        cols = int(rng.integers(2, 21))
        rows = int(rng.integers(cols, 50))
        s = random_system(rng, rows, cols)
        p = FilterParams(float(10 ** rng.uniform(-3, 0)), int(rng.integers(1, 5)))
        direct = iterated_tikhonov(s, p)
        spectral = spectral_solve_check(s, p)
        assert np.linalg.norm(direct - spectral) <= 1e-8 * max(1.0, np.linalg.norm(direct))

    def test_inner_residuals_decrease(self):
        rng = np.random.default_rng(7)
        s = random_system(rng, 20, 10)
        _, path = iterated_tikhonov(s, FilterParams(0.05, 6), return_path=True)
        res = [s.residual_norm(p) for p in path]
        assert len(path) == 7
        assert np.all(np.diff(res) <= 1e-12)

    def test_zero_operator_returns_start(self):
        sys = LinearizedSystem(np.zeros((4, 3)), np.ones(4), np.arange(3.0), np.ones(4), np.eye(3))
        assert np.allclose(iterated_tikhonov(sys, FilterParams(0.5, 2)), np.arange(3.0))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            LinearizedSystem(np.zeros((4, 3)), np.ones(3), np.zeros(3), np.ones(4), np.eye(3))
        with pytest.raises(ValueError):
            LinearizedSystem(np.zeros((4, 3)), np.ones(4), np.zeros(3), -np.ones(4), np.eye(3))


class TestSpectralCalculus:
    def test_adjoint_and_eigen(self):
        rng = np.random.default_rng(3)
        s = random_system(rng, 12, 7)
        calc = SpectralCalculus(s.T, s.image_weights, s.gram)
        phi, eta = rng.standard_normal(7), rng.standard_normal(12)
        lhs = np.sum(s.image_weights * (s.T @ phi) * eta)
        rhs = phi @ s.gram @ calc.adjoint(eta)
        assert lhs == pytest.approx(rhs, rel=1e-10)
        # T*T as a matrix equals G^{-1} T' W T
        TT = np.linalg.solve(s.gram, s.normal_operator())
        assert np.allclose(calc.matrix(lambda l: l), TT, atol=1e-10)
        assert calc.norm_sq() == pytest.approx(np.max(np.abs(np.linalg.eigvals(TT))), rel=1e-10)
        assert np.allclose(calc.apply(lambda l: l, phi), TT @ phi, atol=1e-10)
