"""Model fitting, gradients, Hessian modes, and the damped solve contract."""

import numpy as np
import pytest

from confbb import (
    ConvergenceFailure,
    Dataset,
    InvalidParameter,
    ModelSpec,
    ShapeError,
    SingularFit,
    compute_hessian,
    fit_erm,
    influence_solve,
    predict,
    prediction_gradient,
)
from confbb.models import (
    HessianApprox,
    _damped_factorization,
    predict_with,
    prediction_gradient_with,
    predictions_and_gradients,
)


def line_dataset():
    # y = 2x + 1 exactly
    return Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([1.0, 3.0, 5.0]), "train")


def fd_gradient(fun, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fun(up) - fun(dn)) / (2 * h)
    return g


class TestLinearFit:
    def test_exact_line_no_intercept(self):
        ds = Dataset(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]), "train")
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), ds)
        assert m.theta_hat.values == pytest.approx([2.0], abs=1e-10)
        assert m.sigma_hat == pytest.approx(0.0, abs=1e-10)

    def test_exact_line_with_intercept(self):
        m = fit_erm(ModelSpec(kind="linear"), line_dataset())
        assert m.theta_hat.values == pytest.approx([1.0, 2.0], abs=1e-10)
        assert np.abs(line_dataset().x[:, 0] * 2 + 1 - (line_dataset().y)).max() == 0.0

    def test_ridge_matches_normal_equations(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        lam = 0.5
        m = fit_erm(ModelSpec(kind="ridge", ridge_lambda=lam, fit_intercept=False), Dataset(x, y, "train"))
        expected = np.linalg.solve(x.T @ x + 20 * lam * np.eye(3), x.T @ y)
        assert m.theta_hat.values == pytest.approx(expected, rel=1e-10)

    def test_singular_design_raises(self):
        x = np.ones((4, 2))  # duplicate columns with intercept
        with pytest.raises(SingularFit):
            fit_erm(ModelSpec(kind="linear"), Dataset(x, np.arange(4.0), "train"))

    def test_ridge_fixes_singular_design(self):
        x = np.ones((4, 2))
        m = fit_erm(ModelSpec(kind="ridge", ridge_lambda=0.1), Dataset(x, np.arange(4.0), "train"))
        assert np.all(np.isfinite(m.theta_hat.values))

    def test_stationarity(self):
        rng = np.random.default_rng(11)
        ds = Dataset(rng.standard_normal((30, 4)), rng.standard_normal(30), "train")
        for spec in (ModelSpec(kind="linear"), ModelSpec(kind="ridge", ridge_lambda=0.3)):
            m = fit_erm(spec, ds)
            assert np.linalg.norm(m.per_sample_grads.mean(axis=0)) <= m.stationarity_tol

    def test_sigma_hat_unbiased_form(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((25, 2))
        y = x @ np.array([1.0, -1.0]) + rng.standard_normal(25)
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), Dataset(x, y, "train"))
        resid = y - x @ m.theta_hat.values
        assert m.sigma_hat == pytest.approx(np.sqrt(resid @ resid / (25 - 2)), rel=1e-12)


class TestMLPFit:
    def test_fit_reaches_tolerance(self, fitted_mlp):
        m, ds = fitted_mlp
        assert np.linalg.norm(m.per_sample_grads.mean(axis=0)) <= m.stationarity_tol

    def test_sigma_hat_tracks_held_out_noise(self, fitted_mlp):
        # The fixture injects noise with sd 0.1; cross-validated sigma_hat
        # should land near it, not near the (interpolating) training RMS.
        m, ds = fitted_mlp
        preds = np.array([predict(m, x) for x in ds.x])
        in_sample = np.sqrt(np.mean((preds - ds.y) ** 2))
        assert m.sigma_hat >= in_sample
        assert 0.05 <= m.sigma_hat <= 0.4

    def test_nonconvergence_raises(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal((50, 2)), rng.standard_normal(50), "train")
        from confbb import models as mod

        old = mod.MLP_MAX_ITER
        mod.MLP_MAX_ITER = 2
        try:
            with pytest.raises(ConvergenceFailure) as err:
                fit_erm(ModelSpec(kind="mlp", hidden_width=8), ds, seed=1)
            assert err.value.grad_norm > 0
        finally:
            mod.MLP_MAX_ITER = old

    def test_needs_two_points(self):
        ds = Dataset(np.array([[1.0]]), np.array([2.0]), "train")
        with pytest.raises(InvalidParameter):
            fit_erm(ModelSpec(kind="mlp"), ds)


class TestPredict:
    def test_linear_prediction(self):
        m = fit_erm(ModelSpec(kind="linear"), line_dataset())
        assert predict(m, [3.0]) == pytest.approx(7.0, rel=1e-12)

    def test_dimension_mismatch(self):
        m = fit_erm(ModelSpec(kind="linear"), line_dataset())
        with pytest.raises(ShapeError):
            predict(m, [1.0, 2.0])
        with pytest.raises(ShapeError):
            prediction_gradient(m, [1.0, 2.0])

    def test_zero_weight_mlp_outputs_bias(self, fitted_mlp):
        m, _ = fitted_mlp
        theta = np.zeros(m.dim)
        theta[-1] = 0.7
        info = m.mlp_info
        expected = info.y_mean + info.y_sd * 0.7
        assert predict_with(m, np.zeros(m.n_features), theta) == pytest.approx(expected, rel=1e-12)

    def test_mlp_training_residuals_bounded_by_loss(self, fitted_mlp):
        m, ds = fitted_mlp
        preds = np.array([predict(m, x) for x in ds.x])
        worst = np.abs(preds - ds.y).max()
        assert worst <= np.sqrt(ds.n) * m.sigma_hat + 1e-12


class TestPredictionGradient:
    def test_design_row(self):
        m = fit_erm(ModelSpec(kind="linear"), line_dataset())
        assert prediction_gradient(m, [3.0]) == pytest.approx([1.0, 3.0])

    def test_zero_hidden_weights_gradient(self, fitted_mlp):
        m, _ = fitted_mlp
        theta = np.zeros(m.dim)
        g = prediction_gradient_with(m, np.full(m.n_features, 0.5), theta)
        h, p = m.mlp_info.width, m.mlp_info.n_features
        assert np.all(g[: h * p] == 0.0)  # dW: v = 0 kills the chain rule
        assert np.all(g[h * p : h * p + h] == 0.0)  # db likewise

    @pytest.mark.parametrize("kind", ["linear", "ridge", "mlp"])
    def test_finite_difference_agreement(self, kind, fitted_by_kind):
        m, ds = fitted_by_kind(kind)
        rng = np.random.default_rng(99)
        for _ in range(25):
            x = rng.standard_normal(m.n_features)
            theta = m.theta_hat.values + 0.05 * rng.standard_normal(m.dim)
            g = prediction_gradient_with(m, x, theta)
            fd = fd_gradient(lambda t: predict_with(m, x, t), theta)
            assert np.linalg.norm(g - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))

    def test_batch_matches_single(self, fitted_mlp):
        m, ds = fitted_mlp
        yhat, grads = predictions_and_gradients(m, ds.x[:5])
        for j in range(5):
            assert yhat[j] == pytest.approx(predict(m, ds.x[j]), rel=1e-12)
            assert grads[j] == pytest.approx(prediction_gradient(m, ds.x[j]), rel=1e-12)


class TestHessian:
    def test_linear_exact_is_xtx_over_n(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((15, 3))
        y = rng.standard_normal(15)
        ds = Dataset(x, y, "train")
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), ds)
        assert m.hessian.matrix == pytest.approx(x.T @ x / 15, rel=1e-12)

    def test_linear_exact_matches_fd_of_gradient(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((15, 2))
        y = rng.standard_normal(15)
        ds = Dataset(x, y, "train")
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), ds)

        def mean_grad(theta):
            r = x @ theta - y
            return x.T @ r / 15

        h_fd = np.column_stack(
            [fd_gradient(lambda t, i=i: mean_grad(t)[i], m.theta_hat.values.copy()) for i in range(2)]
        )
        assert m.hessian.matrix == pytest.approx(h_fd, abs=1e-6)

    def test_exact_equals_gauss_newton_for_linear(self):
        rng = np.random.default_rng(5)
        ds = Dataset(rng.standard_normal((12, 2)), rng.standard_normal(12), "train")
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), ds)
        h_gn = compute_hessian(m, ds, "gauss_newton")
        assert m.hessian.matrix == pytest.approx(h_gn.matrix, rel=1e-12)

    def test_diagonal_of_diagonal_design(self):
        x = np.diag([1.0, 2.0, 3.0])
        ds = Dataset(x, np.array([1.0, 1.0, 1.0]), "train")
        m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), ds)
        h_diag = compute_hessian(m, ds, "diagonal")
        assert h_diag.matrix == pytest.approx(m.hessian.matrix, rel=1e-12)

    def test_mlp_exact_matches_fd(self):
        rng = np.random.default_rng(21)
        ds = Dataset(rng.standard_normal((12, 1)), rng.standard_normal(12), "train")
        m = fit_erm(ModelSpec(kind="mlp", hidden_width=2), ds, seed=2)
        h = compute_hessian(m, ds, "exact").matrix

        from confbb.models import _mlp_loss_value_grad

        weights = np.full(12, 1.0 / 12)
        theta = m.theta_hat.values

        def mean_grad(t):
            return _mlp_loss_value_grad(t, m.mlp_info, ds.x, ds.y, weights)[1]

        d = theta.size
        h_fd = np.empty((d, d))
        eps = 1e-5
        for i in range(d):
            up, dn = theta.copy(), theta.copy()
            up[i] += eps
            dn[i] -= eps
            h_fd[:, i] = (mean_grad(up) - mean_grad(dn)) / (2 * eps)
        assert np.abs(h - 0.5 * (h_fd + h_fd.T)).max() < 1e-5

    def test_symmetry(self, fitted_mlp):
        m, ds = fitted_mlp
        for mode in ("exact", "gauss_newton"):
            h = compute_hessian(m, ds, mode).matrix
            assert np.abs(h - h.T).max() <= 1e-12

    def test_unknown_mode(self, fitted_mlp):
        m, ds = fitted_mlp
        with pytest.raises(InvalidParameter):
            compute_hessian(m, ds, "block")


class TestInfluenceSolve:
    def test_zero_maps_to_zero(self):
        h = _damped_factorization(np.eye(3), "exact", convex=True)
        assert influence_solve(h, np.zeros(3)) == pytest.approx(np.zeros(3))

    def test_identity(self):
        h = _damped_factorization(np.eye(2), "exact", convex=True)
        assert h.damping_lambda == 0.0
        assert influence_solve(h, np.array([1.0, 2.0])) == pytest.approx([1.0, 2.0], rel=1e-12)

    def test_random_spd_residual(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((5, 5))
        spd = a @ a.T + 0.5 * np.eye(5)
        h = _damped_factorization(spd, "exact", convex=True)
        for _ in range(20):
            v = rng.standard_normal(5)
            u = influence_solve(h, v)
            res = np.linalg.norm((spd + h.damping_lambda * np.eye(5)) @ u - v)
            assert res <= 1e-8 * np.linalg.norm(v)

    def test_shape_check(self):
        h = _damped_factorization(np.eye(3), "exact", convex=True)
        with pytest.raises(ShapeError):
            influence_solve(h, np.zeros(4))

    def test_damping_escalates_on_rank_deficiency(self):
        g = np.outer(np.ones(4), np.ones(4))  # rank one
        h = _damped_factorization(g, "gauss_newton")
        assert h.damping_lambda > 0
        assert isinstance(h, HessianApprox)
