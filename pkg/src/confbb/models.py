"""Base regression models exposing the pieces resampling-based uncertainty needs.

Three model kinds share one interface: ordinary least squares, ridge
regression (both solved by normal equations), and a one-hidden-layer tanh
MLP trained by full-batch gradient descent with Barzilai-Borwein steps and
Armijo backtracking. A fitted model carries the parameter vector at the
empirical risk minimizer, the per-sample loss gradients at that point, a
damped Hessian factorization supporting repeated linear solves, and the
residual noise scale.

The per-sample loss is squared error, ``l_i = 0.5 * (y_i - f(x_i, theta))**2``;
ridge adds ``0.5 * lam * ||theta||**2`` to each sample's loss so that any
weighting summing to one leaves the penalty untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .data import Dataset
from .errors import (
    ConvergenceFailure,
    IllConditioned,
    InvalidParameter,
    ShapeError,
    SingularFit,
)

MODEL_KINDS = ("linear", "ridge", "mlp")
HESSIAN_MODES = ("exact", "gauss_newton", "diagonal")

LINEAR_GRAD_TOL = 1e-6
MLP_GRAD_TOL = 1e-4
MLP_MAX_ITER = 20000


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit and its structural options."""

    kind: str
    ridge_lambda: float = 0.0
    hidden_width: int = 32
    activation: str = "tanh"
    fit_intercept: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidParameter(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.ridge_lambda < 0:
            raise InvalidParameter("ridge_lambda must be >= 0")
        if self.kind == "ridge" and self.ridge_lambda == 0:
            raise InvalidParameter("ridge requires ridge_lambda > 0 (use kind='linear' otherwise)")
        if self.hidden_width < 1:
            raise InvalidParameter("hidden_width must be >= 1")
        if self.activation != "tanh":
            raise InvalidParameter(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class ParameterVector:
    """Flattened model parameters."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ShapeError(f"parameter vector must be 1-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("parameter vector contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HessianApprox:
    """Symmetric curvature matrix with a damped Cholesky factorization.

    ``matrix`` is the undamped H; solves are against H + damping_lambda * I.
    """

    mode: str
    matrix: np.ndarray
    damping_lambda: float
    _cho: tuple

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Solve (H + damping * I) u = v; v may be a vector or a (d, k) block."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise ShapeError(f"right-hand side has leading dim {v.shape[0]}, expected {self.dim}")
        return scipy.linalg.cho_solve(self._cho, v)


LINEAR_DAMPING_REL = 1e-6
MLP_DAMPING_REL = 1e-3


def _damped_factorization(h: np.ndarray, mode: str, convex: bool = False) -> HessianApprox:
    """Factorize H + lambda*I, doubling lambda until the Cholesky succeeds.

    Convex-objective curvature (linear/ridge) is tried undamped first so the
    influence map stays exact there, escalating from a small trace-scaled
    floor only on failure. Network Hessians always carry a larger floor:
    their near-flat directions otherwise let the influence step travel far
    beyond where warm-started retraining actually moves.
    """
    d = h.shape[0]
    if not np.all(np.isfinite(h)):
        raise IllConditioned("Hessian contains non-finite entries")
    rel = LINEAR_DAMPING_REL if convex else MLP_DAMPING_REL
    base = max(1e-8, rel * float(np.trace(h)) / d)
    eye = np.eye(d)
    lam = 0.0 if convex else base
    for _ in range(21):
        try:
            cho = scipy.linalg.cho_factor(h + lam * eye if lam else h, lower=True)
        except scipy.linalg.LinAlgError:
            lam = base if lam == 0.0 else 2.0 * lam
            continue
        return HessianApprox(mode=mode, matrix=h, damping_lambda=lam, _cho=cho)
    raise IllConditioned(f"factorization failed after damping escalation (final lambda {lam:.3e})")


def influence_solve(hessian: HessianApprox, v: np.ndarray) -> np.ndarray:
    """Solve the damped curvature system for a single right-hand side."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != hessian.dim:
        raise ShapeError(f"expected vector of length {hessian.dim}, got shape {v.shape}")
    return hessian.solve(v)


# ---------------------------------------------------------------------------
# MLP internals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MLPInfo:
    """Architecture plus the input/target standardization frozen at fit time."""

    n_features: int
    width: int
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    @property
    def dim(self) -> int:
        h, p = self.width, self.n_features
        return h * p + 2 * h + 1


def _mlp_unpack(theta: np.ndarray, info: MLPInfo):
    h, p = info.width, info.n_features
    w = theta[: h * p].reshape(h, p)
    b = theta[h * p : h * p + h]
    v = theta[h * p + h : h * p + 2 * h]
    c = theta[-1]
    return w, b, v, c


def _mlp_pack(w, b, v, c) -> np.ndarray:
    return np.concatenate([w.ravel(), b, v, [c]])


def _mlp_forward(theta: np.ndarray, info: MLPInfo, x: np.ndarray):
    """Return (f, hidden activations T, standardized inputs Xs) for rows of x."""
    w, b, v, c = _mlp_unpack(theta, info)
    xs = (x - info.x_mean) / info.x_sd
    t = np.tanh(xs @ w.T + b)
    f = info.y_mean + info.y_sd * (t @ v + c)
    return f, t, xs


def _mlp_pred_gradients(theta: np.ndarray, info: MLPInfo, x: np.ndarray) -> np.ndarray:
    """Rows are d f(x_i) / d theta, shape (m, d)."""
    w, b, v, _ = _mlp_unpack(theta, info)
    xs = (x - info.x_mean) / info.x_sd
    t = np.tanh(xs @ w.T + b)
    d1 = 1.0 - t * t
    m = x.shape[0]
    gw = (info.y_sd * v * d1)[:, :, None] * xs[:, None, :]
    gb = info.y_sd * v * d1
    gv = info.y_sd * t
    gc = np.full((m, 1), info.y_sd)
    return np.concatenate([gw.reshape(m, -1), gb, gv, gc], axis=1)


def _mlp_loss_value(theta: np.ndarray, info: MLPInfo, x, y, weights) -> float:
    f, _, _ = _mlp_forward(theta, info, x)
    return float(weights @ (0.5 * (f - y) ** 2))


def _mlp_loss_value_grad(theta: np.ndarray, info: MLPInfo, x, y, weights):
    w, b, v, c = _mlp_unpack(theta, info)
    xs = (x - info.x_mean) / info.x_sd
    t = np.tanh(xs @ w.T + b)
    f = info.y_mean + info.y_sd * (t @ v + c)
    r = f - y
    val = float(weights @ (0.5 * r * r))
    u = info.y_sd * (weights * r)
    hid = (u[:, None] * (1.0 - t * t)) * v
    gw = hid.T @ xs
    gb = hid.sum(axis=0)
    gv = t.T @ u
    gc = u.sum()
    return val, _mlp_pack(gw, gb, gv, gc)


def _mlp_weighted_curvature(theta: np.ndarray, info: MLPInfo, x, y, weights) -> np.ndarray:
    """Weighted second derivative of the loss: sum_i w_i (g_i g_i^T + r_i d2f_i)."""
    w, b, v, c = _mlp_unpack(theta, info)
    xs = (x - info.x_mean) / info.x_sd
    t = np.tanh(xs @ w.T + b)
    d1 = 1.0 - t * t
    d2 = -2.0 * t * d1
    f = info.y_mean + info.y_sd * (t @ v + c)
    r = f - y
    j = _mlp_pred_gradients(theta, info, x)
    h = j.T @ (weights[:, None] * j)

    # Curvature of f itself, weighted by q_i = w_i * r_i. Only blocks touching
    # the same hidden unit are nonzero; the output bias row is identically zero.
    q = weights * r * info.y_sd
    hdim, p = info.width, info.n_features
    iw = lambda k: slice(k * p, (k + 1) * p)
    ib = hdim * p
    iv = hdim * p + hdim
    for k in range(hdim):
        qk2 = q * d2[:, k] * v[k]
        qk1 = q * d1[:, k]
        s1 = xs.T @ (qk2[:, None] * xs)
        s2 = xs.T @ qk2
        s3 = qk2.sum()
        s4 = xs.T @ qk1
        s5 = qk1.sum()
        h[iw(k), iw(k)] += s1
        h[iw(k), ib + k] += s2
        h[ib + k, iw(k)] += s2
        h[ib + k, ib + k] += s3
        h[iv + k, iw(k)] += s4
        h[iw(k), iv + k] += s4
        h[iv + k, ib + k] += s5
        h[ib + k, iv + k] += s5
    return 0.5 * (h + h.T)


def _descend(value, value_grad, theta0, tol, max_iter):
    """Steepest descent with Barzilai-Borwein steps and nonmonotone Armijo backtracking.

    The sufficient-decrease test compares against the worst of the last few
    accepted values (Grippo-style); strict monotonicity would defeat the BB
    step and stall well above tolerance. Returns the best iterate seen by
    gradient norm.
    """
    theta = np.asarray(theta0, dtype=float)
    val, grad = value_grad(theta)
    gnorm = float(np.linalg.norm(grad))
    best_theta, best_gnorm = theta, gnorm
    recent = [val]
    prev_theta = prev_grad = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if gnorm <= tol:
            break
        if prev_theta is None:
            step = 1.0 / max(gnorm, 1.0)
        else:
            s = theta - prev_theta
            dy = grad - prev_grad
            sy = float(s @ dy)
            if sy > 1e-300:
                # Alternate the two BB step rules; the pair converges where
                # either alone tends to cycle near tolerance.
                step = float(s @ s) / sy if iterations % 2 == 0 else sy / max(float(dy @ dy), 1e-300)
            else:
                step = 1.0
            step = min(max(step, 1e-12), 1e12)
        ref = max(recent)
        accepted = False
        t = step
        for _ in range(60):
            cand = theta - t * grad
            cval = value(cand)
            if cval <= ref - 1e-4 * t * gnorm * gnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if prev_theta is None:
                break  # no decrease even from a conservative step: numerical floor
            # Drop the BB memory and the nonmonotone window, then retry from
            # the best iterate; cycling near tolerance usually escapes this way.
            theta = best_theta
            val, grad = value_grad(theta)
            gnorm = best_gnorm
            recent = [val]
            prev_theta = prev_grad = None
            continue
        prev_theta, prev_grad = theta, grad
        theta = cand
        val, grad = value_grad(theta)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < best_gnorm:
            best_theta, best_gnorm = theta, gnorm
        recent.append(val)
        if len(recent) > 10:
            recent.pop(0)
    return best_theta, best_gnorm, iterations


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedModel:
    """A trained model plus everything influence-based resampling consumes.

    Immutable after construction; safe to share across threads for read-only
    prediction and solves. ``per_sample_grads`` rows are the loss gradients
    at ``theta_hat``; their mean norm is at most ``stationarity_tol``.
    """

    spec: ModelSpec
    theta_hat: ParameterVector
    per_sample_grads: np.ndarray
    hessian: HessianApprox
    sigma_hat: float
    n_train: int
    n_features: int
    stationarity_tol: float
    target_sd: float
    mlp_info: MLPInfo | None = None

    @property
    def dim(self) -> int:
        return self.theta_hat.dim


def _design(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    if spec.fit_intercept:
        return np.hstack([np.ones((x.shape[0], 1)), x])
    return x.copy()


def _linear_hessian(spec: ModelSpec, design: np.ndarray, mode: str) -> np.ndarray:
    n, d = design.shape
    if mode in ("exact", "gauss_newton"):
        h = design.T @ design / n
    elif mode == "diagonal":
        h = np.diag(np.einsum("ij,ij->j", design, design) / n)
    else:
        raise InvalidParameter(f"mode must be one of {HESSIAN_MODES}, got {mode!r}")
    if spec.kind == "ridge":
        # The penalty's curvature is exact and belongs in every mode.
        h = h + spec.ridge_lambda * np.eye(d)
    return h


def _fit_linear(spec: ModelSpec, train: Dataset, mode: str) -> FittedModel:
    x, y = train.x, train.y
    design = _design(spec, x)
    n, d = design.shape
    a = design.T @ design
    if spec.kind == "ridge":
        a = a + n * spec.ridge_lambda * np.eye(d)
    try:
        cho = scipy.linalg.cho_factor(a, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise SingularFit(f"normal equations are singular (n={n}, d={d})") from err
    theta = scipy.linalg.cho_solve(cho, design.T @ y)
    resid = design @ theta - y
    grads = resid[:, None] * design
    if spec.kind == "ridge":
        grads = grads + spec.ridge_lambda * theta
    rss = float(resid @ resid)
    sigma_hat = float(np.sqrt(rss / max(n - d, 1)))
    hessian = _damped_factorization(_linear_hessian(spec, design, mode), mode, convex=True)
    y_scale = max(1.0, float(y.std()))
    return FittedModel(
        spec=spec,
        theta_hat=ParameterVector(theta),
        per_sample_grads=grads,
        hessian=hessian,
        sigma_hat=sigma_hat,
        n_train=n,
        n_features=x.shape[1],
        stationarity_tol=LINEAR_GRAD_TOL * y_scale * y_scale,
        target_sd=float(y.std()),
    )


def _mlp_init(info: MLPInfo, rng: np.random.Generator) -> np.ndarray:
    h, p = info.width, info.n_features
    w = rng.normal(0.0, 1.0 / np.sqrt(p), size=(h, p))
    v = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
    return _mlp_pack(w, np.zeros(h), v, 0.0)


def _mlp_info_for(spec: ModelSpec, train: Dataset) -> MLPInfo:
    x_sd = train.x.std(axis=0)
    y_sd = float(train.y.std())
    return MLPInfo(
        n_features=train.n_features,
        width=spec.hidden_width,
        x_mean=train.x.mean(axis=0),
        x_sd=np.where(x_sd > 0, x_sd, 1.0),
        y_mean=float(train.y.mean()),
        y_sd=y_sd if y_sd > 0 else 1.0,
    )


def _mlp_cv_sigma(info: MLPInfo, x, y, theta0, tol: float, rng: np.random.Generator, folds: int = 5) -> float:
    """Cross-validated residual scale.

    A fully trained network this size interpolates its training points, so
    the in-sample residual wildly underestimates observation noise; held-out
    residuals from fold refits do not. Every fold restarts from the main
    fit's initialization (data-independent, so no leakage) to stay in the
    same basin; fold fits are best-effort, with no convergence requirement.
    """
    n = y.shape[0]
    folds = min(folds, n // 2)
    if folds < 2:
        r = _mlp_forward(theta0, info, x)[0] - y
        return float(np.sqrt(np.mean(r * r)))
    order = rng.permutation(n)
    sq = np.empty(n)
    for k in range(folds):
        held = order[k::folds]
        weights = np.full(n, 1.0 / (n - held.shape[0]))
        weights[held] = 0.0
        theta_k, _, _ = _descend(
            lambda th: _mlp_loss_value(th, info, x, y, weights),
            lambda th: _mlp_loss_value_grad(th, info, x, y, weights),
            theta0,
            tol,
            MLP_MAX_ITER,
        )
        preds = _mlp_forward(theta_k, info, x[held])[0]
        sq[held] = (preds - y[held]) ** 2
    # Gaussian-consistent robust scale: mean-square would be dominated by
    # regions of concentrated model bias and over-widen every interval.
    return float(1.4826 * np.median(np.sqrt(sq)))


def _fit_mlp(spec: ModelSpec, train: Dataset, seed: int, mode: str) -> FittedModel:
    if train.n_features < 1:
        raise InvalidParameter("mlp requires at least one input feature")
    info = _mlp_info_for(spec, train)
    x, y = train.x, train.y
    n = train.n
    weights = np.full(n, 1.0 / n)
    rng = np.random.default_rng(seed)
    theta0 = _mlp_init(info, rng)
    tol = MLP_GRAD_TOL * info.y_sd * info.y_sd
    theta, gnorm, _ = _descend(
        lambda th: _mlp_loss_value(th, info, x, y, weights),
        lambda th: _mlp_loss_value_grad(th, info, x, y, weights),
        theta0,
        tol,
        MLP_MAX_ITER,
    )
    if gnorm > tol:
        raise ConvergenceFailure(gnorm, f"mlp fit stalled at gradient norm {gnorm:.3e} > {tol:.3e}")
    f, _, _ = _mlp_forward(theta, info, x)
    r = f - y
    grads = r[:, None] * _mlp_pred_gradients(theta, info, x)
    sigma_hat = _mlp_cv_sigma(info, x, y, theta0, tol, rng)
    if mode == "gauss_newton":
        j = _mlp_pred_gradients(theta, info, x)
        h = j.T @ j / n
    elif mode == "exact":
        h = _mlp_weighted_curvature(theta, info, x, y, weights)
    elif mode == "diagonal":
        j = _mlp_pred_gradients(theta, info, x)
        h = np.diag(np.einsum("ij,ij->j", j, j) / n)
    else:
        raise InvalidParameter(f"mode must be one of {HESSIAN_MODES}, got {mode!r}")
    hessian = _damped_factorization(h, mode)
    return FittedModel(
        spec=spec,
        theta_hat=ParameterVector(theta),
        per_sample_grads=grads,
        hessian=hessian,
        sigma_hat=sigma_hat,
        n_train=n,
        n_features=train.n_features,
        stationarity_tol=tol,
        target_sd=float(y.std()),
        mlp_info=info,
    )


def fit_erm(spec: ModelSpec, train: Dataset, seed: int = 0, hessian_mode: str | None = None) -> FittedModel:
    """Fit the model to the uniform-weight empirical risk and package gradients/curvature.

    Linear and ridge solve their normal equations; the MLP runs full-batch
    descent until the gradient norm (in standardized target units) falls
    below tolerance, raising ConvergenceFailure otherwise. ``hessian_mode``
    defaults to exact for linear/ridge and gauss_newton for the MLP.
    """
    if spec.kind in ("ridge", "mlp") and train.n < 2:
        raise InvalidParameter(f"{spec.kind} fit needs at least 2 training points")
    mode = hessian_mode or ("gauss_newton" if spec.kind == "mlp" else "exact")
    if mode not in HESSIAN_MODES:
        raise InvalidParameter(f"mode must be one of {HESSIAN_MODES}, got {mode!r}")
    if spec.kind == "mlp":
        return _fit_mlp(spec, train, seed, mode)
    return _fit_linear(spec, train, mode)


def compute_hessian(model: FittedModel, train: Dataset, mode: str) -> HessianApprox:
    """Recompute the damped curvature factorization for a fitted model.

    ``exact`` averages the full per-sample second derivatives; ``gauss_newton``
    keeps only the prediction-gradient outer products; ``diagonal`` is the
    diagonal of the gauss_newton matrix.
    """
    if mode not in HESSIAN_MODES:
        raise InvalidParameter(f"mode must be one of {HESSIAN_MODES}, got {mode!r}")
    theta = model.theta_hat.values
    if model.spec.kind == "mlp":
        info = model.mlp_info
        n = train.n
        if mode == "gauss_newton":
            j = _mlp_pred_gradients(theta, info, train.x)
            h = j.T @ j / n
        elif mode == "exact":
            h = _mlp_weighted_curvature(theta, info, train.x, train.y, np.full(n, 1.0 / n))
        else:
            j = _mlp_pred_gradients(theta, info, train.x)
            h = np.diag(np.einsum("ij,ij->j", j, j) / n)
        return _damped_factorization(h, mode)
    design = _design(model.spec, train.x)
    return _damped_factorization(_linear_hessian(model.spec, design, mode), mode, convex=True)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _check_input(model: FittedModel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.n_features,):
        raise ShapeError(f"expected input of shape ({model.n_features},), got {x.shape}")
    return x


def _check_theta(model: FittedModel, theta) -> np.ndarray:
    values = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    if values.shape != (model.dim,):
        raise ShapeError(f"expected parameter vector of length {model.dim}, got shape {values.shape}")
    return values


def predict_with(model: FittedModel, x, theta) -> float:
    """Model output f(x, theta) at arbitrary parameters in the fitted parameterization."""
    x = _check_input(model, x)
    values = _check_theta(model, theta)
    if model.spec.kind == "mlp":
        f, _, _ = _mlp_forward(values, model.mlp_info, x[None, :])
        return float(f[0])
    return float(_design(model.spec, x[None, :])[0] @ values)


def predict(model: FittedModel, x) -> float:
    """Model output at the fitted parameters."""
    return predict_with(model, x, model.theta_hat)


def prediction_gradient_with(model: FittedModel, x, theta) -> np.ndarray:
    """Gradient of the model output with respect to the parameters, at ``theta``."""
    x = _check_input(model, x)
    values = _check_theta(model, theta)
    if model.spec.kind == "mlp":
        return _mlp_pred_gradients(values, model.mlp_info, x[None, :])[0]
    return _design(model.spec, x[None, :])[0]


def prediction_gradient(model: FittedModel, x) -> np.ndarray:
    """Gradient of the model output at the fitted parameters."""
    return prediction_gradient_with(model, x, model.theta_hat)


def predictions_and_gradients(model: FittedModel, x: np.ndarray):
    """Batch (f(x_j), grad f(x_j)) over rows of ``x``; returns ((m,), (m, d))."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeError(f"expected (m, {model.n_features}) inputs, got shape {x.shape}")
    theta = model.theta_hat.values
    if model.spec.kind == "mlp":
        f, _, _ = _mlp_forward(theta, model.mlp_info, x)
        return f, _mlp_pred_gradients(theta, model.mlp_info, x)
    design = _design(model.spec, x)
    return design @ theta, design
