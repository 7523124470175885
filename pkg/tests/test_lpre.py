import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flpre.basis import (DesignMatrix, FunctionalSample, basis_matrix, build_design, make_basis,
                         penalty_matrix)
from flpre.datagen import SimConfig, simulate
from flpre.lpre import (ExpOverflowError, FitResult, SingularHessianError, fit_newton, lpre_gradient,
                        lpre_hessian, lpre_loss, plugin_matrices, predict_beta,
                        predict_response, sandwich_variance)


def random_problem(seed, n=60, K=4, lam=0.1):
    rng = np.random.default_rng(seed)
    b = make_basis(K)
    rows = rng.normal(size=(n, b.dim)) / b.dim
    d = DesignMatrix(rows, penalty_matrix(b), b)
    theta = rng.normal(size=b.dim)
    y = np.exp(rows @ theta + rng.normal(0, 0.5, n))
    return d, y, theta, lam


def scalar_design(B, D=None):
    B = np.atleast_2d(np.asarray(B, float))
    return DesignMatrix(B, np.zeros((B.shape[1], B.shape[1])) if D is None else D)


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g


class TestLoss:
    def test_exact_fit_zero(self):
        d, _, theta, _ = random_problem(0)
        assert lpre_loss(d, np.exp(d.rows @ theta), theta, 0.0) == pytest.approx(0, abs=1e-12)

    def test_closed_form(self):
        d = scalar_design([[1.0]])
        assert lpre_loss(d, [math.e], [0.0], 0.0) == pytest.approx(math.e + 1 / math.e - 2, abs=1e-14)
        assert lpre_loss(d, [math.e], [0.0], 0.0) == pytest.approx(1.08616, abs=1e-5)

    def test_penalty_decomposition(self):
        d, y, theta, lam = random_problem(1)
        direct = np.sum(y * np.exp(-d.rows @ theta) + np.exp(d.rows @ theta) / y - 2)
        pen = 0.5 * lam * theta @ d.penalty @ theta
        assert abs(lpre_loss(d, y, theta, lam) - (direct + pen)) < 1e-12 * max(1, direct)

    def test_rejects_nonpositive(self):
        d, y, theta, _ = random_problem(2)
        y[3] = 0.0
        with pytest.raises(ValueError):
            lpre_loss(d, y, theta, 0.0)

    def test_overflow_guard(self):
        d = scalar_design([[1.0]])
        with pytest.raises(ExpOverflowError):
            lpre_loss(d, [1.0], [800.0], 0.0)

    # below ~1e-16 exp(u) rounds to 1 and the summand is exactly 0
    @given(u=st.floats(-30, 30).filter(lambda u: u == 0 or abs(u) > 1e-12))
    @settings(max_examples=50, deadline=None)
    def test_summand_nonnegative(self, u):
        d = scalar_design([[1.0]])
        v = lpre_loss(d, [math.exp(u)], [0.0], 0.0)
        assert v >= 0
        assert (v == 0) == (u == 0)


class TestDerivatives:
    def test_gradient_zero_at_exact_fit(self):
        d, _, theta, _ = random_problem(3)
        g = lpre_gradient(d, np.exp(d.rows @ theta), theta, 0.0)
        assert np.max(np.abs(g)) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_fd(self, seed):
        d, y, theta, lam = random_problem(seed)
        fd = fd_gradient(lambda th: lpre_loss(d, y, th, lam), theta)
        g = lpre_gradient(d, y, theta, lam)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_hessian_fd(self, seed):
        d, y, theta, lam = random_problem(seed)
        fd = np.column_stack([
            fd_gradient(lambda th: lpre_gradient(d, y, th, lam)[j], theta) for j in range(d.dim)])
        H = lpre_hessian(d, y, theta, lam)
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.norm(H - fd) / np.linalg.norm(H) < 1e-5

    def test_gradient_linear_in_lambda(self):
        d, y, theta, lam = random_problem(4)
        diff = lpre_gradient(d, y, theta, 2 * lam) - lpre_gradient(d, y, theta, lam)
        np.testing.assert_allclose(diff, lam * d.penalty @ theta, rtol=1e-10, atol=1e-10)

    def test_hessian_penalty_shift(self):
        d, y, theta, lam = random_problem(5)
        diff = lpre_hessian(d, y, theta, lam) - lpre_hessian(d, y, theta, 0.0)
        np.testing.assert_allclose(diff, lam * d.penalty, rtol=1e-12, atol=1e-9)

    def test_unit_hessian(self):
        d = scalar_design([[1.0, 0.0, 0.0]])
        H = lpre_hessian(d, [1.0], np.zeros(3), 0.0)
        expected = np.zeros((3, 3))
        expected[0, 0] = 2.0
        np.testing.assert_array_equal(H, expected)


class TestNewton:
    def test_scalar_log_y(self):
        fit = fit_newton(scalar_design([[1.0]]), [2.0], 0.0)
        assert fit.converged
        assert abs(fit.theta_hat[0] - math.log(2)) < 1e-10

    def test_exact_fit_from_truth(self):
        d, _, theta, _ = random_problem(6)
        fit = fit_newton(d, np.exp(d.rows @ theta), 0.0, init=theta)
        assert fit.converged and fit.iterations <= 1
        assert fit.final_gradient_norm < 1e-8

    def test_exact_fit_loss_is_penalty(self):
        d, _, theta, _ = random_problem(7)
        y = np.exp(d.rows @ theta)
        lam = 1e-8
        fit = fit_newton(d, y, lam)
        assert fit.converged
        pen = 0.5 * lam * fit.theta_hat @ d.penalty @ fit.theta_hat
        assert fit.loss == pytest.approx(lpre_loss(d, y, fit.theta_hat, lam), rel=1e-9)
        # the data term is second order in lam; the loss is the penalty up to that
        assert 0 <= fit.loss - pen < 1e-3 * pen

    def test_simulated_monotone(self):
        curves, y = simulate(SimConfig(500, "C1", "R1", seed=11))
        b = make_basis(10)
        d = curves.design(b)
        fit = fit_newton(d, y, 1e-3, init=np.zeros(b.dim))
        assert fit.converged and fit.final_gradient_norm < 1e-8
        assert np.all(np.diff(fit.loss_history) <= 0)
        assert fit.iterations > 1

    def test_random_starts_agree(self):
        d, y, _, lam = random_problem(8, n=200)
        ref = fit_newton(d, y, lam).theta_hat
        rng = np.random.default_rng(0)
        for _ in range(5):
            fit = fit_newton(d, y, lam, init=rng.normal(0, 2, d.dim))
            assert fit.converged
            assert np.max(np.abs(fit.theta_hat - ref)) < 1e-6

    def test_scale_equivariance_identical_curves(self):
        # identical curves: only the common index B'theta is identified
        g = np.linspace(0, 1, 101)
        x = 1 + np.sin(3 * g)
        b = make_basis(3)
        d = build_design([FunctionalSample(g, x)] * 40, b)
        y = np.exp(np.random.default_rng(1).normal(size=40))
        c = 3.7
        f1 = fit_newton(d, y, 0.0, jitter=1e-10)
        f2 = fit_newton(d, c * y, 0.0, jitter=1e-10)
        idx1 = d.rows[0] @ f1.theta_hat
        idx2 = d.rows[0] @ f2.theta_hat
        assert abs((idx2 - idx1) - math.log(c)) < 1e-8

    def test_scale_equivariance_intercept(self):
        d, y, _, _ = random_problem(9, n=150)
        rows = np.column_stack([np.ones(d.n), d.rows])
        dd = DesignMatrix(rows, np.zeros((rows.shape[1],) * 2))
        f1, f2 = fit_newton(dd, y, 0.0), fit_newton(dd, 5.0 * y, 0.0)
        shift = f2.theta_hat - f1.theta_hat
        np.testing.assert_allclose(rows @ shift, math.log(5.0), atol=1e-8)

    def test_singular_hessian(self):
        d = scalar_design([[1.0, 1.0]])
        with pytest.raises(SingularHessianError) as info:
            fit_newton(d, [2.0], 0.0)
        assert info.value.iteration == 0

    def test_jitter_rescues_singular(self):
        fit = fit_newton(scalar_design([[1.0, 1.0]]), [2.0], 0.0, jitter=1e-10)
        assert fit.converged
        assert abs(fit.theta_hat.sum() - math.log(2)) < 1e-8

    def test_max_iter_reports_not_converged(self):
        d, y, _, lam = random_problem(10)
        fit = fit_newton(d, y, lam, init=np.full(d.dim, 3.0), max_iter=1)
        assert not fit.converged
        assert fit.final_gradient_norm >= 1e-8

    def test_rejects_bad_args(self):
        d, y, _, _ = random_problem(11)
        with pytest.raises(ValueError):
            fit_newton(d, y, -1.0)
        with pytest.raises(ValueError):
            fit_newton(d, y, 0.0, tol=0.0)


class TestSandwich:
    def test_exact_fit_zero_G(self):
        d, _, theta, _ = random_problem(12, n=100)
        y = np.exp(d.rows @ theta)
        fit = fit_newton(d, y, 0.0, init=theta)
        G, H, V = sandwich_variance(d, y, fit)
        assert np.max(np.abs(G)) < 1e-20
        assert np.max(np.abs(V)) < 1e-18

    def test_single_observation(self):
        d = DesignMatrix(np.array([[1.0]]), np.zeros((1, 1)))
        G, H = plugin_matrices(d, [math.e], np.zeros(1), 0.0)
        assert G[0, 0] == pytest.approx((1 / math.e - math.e) ** 2, rel=1e-14)
        assert G[0, 0] == pytest.approx(5.5244, abs=1e-4)
        assert H[0, 0] == pytest.approx(math.e + 1 / math.e, rel=1e-14)
        assert H[0, 0] == pytest.approx(3.0862, abs=1e-4)

    def test_naive_loop(self):
        d, y, _, lam = random_problem(13, n=80)
        fit = fit_newton(d, y, lam)
        G, H, V = sandwich_variance(d, y, fit)
        Gn = np.zeros_like(G)
        Hn = np.zeros_like(H)
        for i in range(d.n):
            w = y[i] * math.exp(-d.rows[i] @ fit.theta_hat)
            Gn += (-w + 1 / w) ** 2 * np.outer(d.rows[i], d.rows[i])
            Hn += (w + 1 / w) * np.outer(d.rows[i], d.rows[i])
        Gn /= d.n
        Hn = Hn / d.n + lam / d.n * d.penalty
        np.testing.assert_allclose(G, Gn, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(H, Hn, rtol=1e-12, atol=1e-14)
        Hi = np.linalg.inv(Hn)
        np.testing.assert_allclose(V, Hi @ Gn @ Hi / d.knot_count, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(V, V.T)
        assert np.linalg.eigvalsh(V).min() > -1e-12

    def test_singular_H(self):
        d = DesignMatrix(np.array([[1.0, 1.0], [2.0, 2.0]]), np.zeros((2, 2)))
        fit = fit_newton(d, [1.0, 2.0], 0.0, jitter=1e-9, variance=False)
        with pytest.raises(SingularHessianError):
            sandwich_variance(d, [1.0, 2.0], fit)


class TestPrediction:
    b = make_basis(6)

    def test_zero_theta(self):
        t = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(predict_beta(np.zeros(self.b.dim), self.b, t), 0)

    def test_ones_theta(self):
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(predict_beta(np.ones(self.b.dim), self.b, t), 1, atol=1e-14)

    def test_zero_variance_band(self):
        fit = FitResult(np.ones(self.b.dim), 0.0, 1, True, 0.0, 0.0, 100,
                        V_full=np.zeros((self.b.dim,) * 2))
        band = predict_beta(fit, self.b, np.linspace(0, 1, 5), with_se=True)
        np.testing.assert_array_equal(band.se, 0)
        np.testing.assert_array_equal(band.lower, band.upper)

    def test_band_width(self):
        curves, y = simulate(SimConfig(400, seed=4))
        d = curves.design(self.b)
        fit = fit_newton(d, y, 1e-3)
        band = predict_beta(fit, self.b, [0.5], with_se=True)
        Bt = basis_matrix(self.b, [0.5])[0]
        se = math.sqrt(self.b.interior_knot_count * Bt @ fit.V_full @ Bt / d.n)
        assert band.se[0] == pytest.approx(se, rel=1e-12)
        assert band.upper[0] - band.beta[0] == pytest.approx(1.959963984540054 * se, rel=1e-9)

    def test_response(self):
        g = np.linspace(0, 1, 101)
        x1 = FunctionalSample(g, np.ones_like(g))
        assert predict_response(np.zeros(self.b.dim), self.b, x1) == 1.0
        assert predict_response(np.ones(self.b.dim), self.b,
                                FunctionalSample(g, np.zeros_like(g))) == 1.0
        c = 0.7
        assert predict_response(np.full(self.b.dim, c), self.b, x1) == pytest.approx(math.exp(c),
                                                                                     rel=1e-12)

    def test_response_overflow(self):
        g = np.linspace(0, 1, 11)
        with pytest.raises(ExpOverflowError):
            predict_response(np.full(self.b.dim, 1000.0), self.b,
                             FunctionalSample(g, np.ones_like(g)))
