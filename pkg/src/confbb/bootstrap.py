"""Dirichlet resampling weights and the first-order response of a fitted model to them.

The parameter update for a weight vector w is

    theta_w = theta_hat - solve(H, sum_i (w_i - 1/n) * g_i)

with g_i the stored per-sample loss gradients, so a uniform weight vector
reproduces theta_hat exactly. ``retrain_oracle`` solves the reweighted
problem from scratch and serves as ground truth for that approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset
from .errors import InvalidParameter, ShapeError, SingularFit
from .models import (
    FittedModel,
    HessianApprox,
    ModelSpec,
    ParameterVector,
    _descend,
    _design,
    _fit_mlp,
    _mlp_info_for,
    _mlp_loss_value,
    _mlp_loss_value_grad,
    predict,
    prediction_gradient,
)

ORACLE_MAX_ITER = 2000
ORACLE_GRAD_TOL = 1e-4


@dataclass(frozen=True)
class WeightVector:
    """One draw from the n-simplex together with the concentration that produced it."""

    w: np.ndarray
    alpha: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.shape[0] < 1:
            raise ShapeError(f"weights must be a nonempty 1-d vector, got shape {w.shape}")
        if np.any(w < 0):
            raise InvalidParameter("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise InvalidParameter(f"weights must sum to 1, got {w.sum()!r}")
        if not self.alpha > 0:
            raise InvalidParameter("alpha must be positive")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]


def dirichlet_rows(alpha: float, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent symmetric Dirichlet(alpha) draws as rows of a (size, n) matrix.

    Gamma-normalization; rows whose gamma draws all underflow to zero are
    redrawn so every row is a valid simplex point.
    """
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidParameter(f"alpha must be a positive real, got {alpha!r}")
    if n < 1 or size < 1:
        raise InvalidParameter("n and size must be >= 1")
    g = rng.gamma(alpha, 1.0, size=(size, n))
    sums = g.sum(axis=1)
    for _ in range(100):
        bad = sums == 0.0
        if not bad.any():
            break
        g[bad] = rng.gamma(alpha, 1.0, size=(int(bad.sum()), n))
        sums = g.sum(axis=1)
    else:
        raise InvalidParameter(f"gamma draws underflow persistently at alpha={alpha!r}")
    w = g / sums[:, None]
    return w / w.sum(axis=1)[:, None]


def sample_dirichlet(alpha: float, n: int, rng: np.random.Generator) -> WeightVector:
    """Draw w ~ Dirichlet(alpha, ..., alpha) over n atoms."""
    return WeightVector(dirichlet_rows(alpha, n, 1, rng)[0], alpha)


@dataclass(frozen=True)
class InfluencePack:
    """Per-sample gradient matrix plus the curvature factorization it pairs with."""

    centered_grads: np.ndarray
    hessian_ref: HessianApprox

    def __post_init__(self):
        g = np.asarray(self.centered_grads, dtype=float)
        if g.ndim != 2:
            raise ShapeError(f"gradient matrix must be 2-d, got shape {g.shape}")
        if g.shape[1] != self.hessian_ref.dim:
            raise ShapeError(
                f"gradient columns ({g.shape[1]}) do not match Hessian dim ({self.hessian_ref.dim})"
            )
        object.__setattr__(self, "centered_grads", g)

    @property
    def n(self) -> int:
        return self.centered_grads.shape[0]


def influence_pack(model: FittedModel) -> InfluencePack:
    """Bundle a fitted model's gradients and curvature for repeated perturbations."""
    return InfluencePack(model.per_sample_grads, model.hessian)


def _weight_array(w, n: int) -> np.ndarray:
    arr = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if arr.shape != (n,):
        raise ShapeError(f"expected {n} weights, got shape {arr.shape}")
    return arr


def perturb_parameters(pack: InfluencePack, theta_hat: ParameterVector, w) -> ParameterVector:
    """First-order reweighted parameters; exact at the uniform weight vector."""
    arr = _weight_array(w, pack.n)
    delta = pack.centered_grads.T @ (arr - 1.0 / pack.n)
    return ParameterVector(theta_hat.values - pack.hessian_ref.solve(delta))


def linearized_prediction(model: FittedModel, x, theta_w) -> float:
    """Prediction expanded to first order in (theta_w - theta_hat); never re-evaluates f."""
    values = theta_w.values if isinstance(theta_w, ParameterVector) else np.asarray(theta_w, dtype=float)
    if values.shape != (model.dim,):
        raise ShapeError(f"expected parameter vector of length {model.dim}, got shape {values.shape}")
    return predict(model, x) + float(prediction_gradient(model, x) @ (values - model.theta_hat.values))


def retrain_oracle(
    spec: ModelSpec,
    train: Dataset,
    w,
    seed: int = 0,
    theta0: ParameterVector | None = None,
) -> ParameterVector:
    """Exact minimizer of the w-weighted empirical risk.

    Linear/ridge solve the weighted normal equations. The MLP runs weighted
    gradient descent warm-started at the uniform-weight solution (pass
    ``theta0`` to skip refitting it) and returns its best iterate after at
    most ORACLE_MAX_ITER steps.
    """
    arr = _weight_array(w, train.n)
    if spec.kind in ("linear", "ridge"):
        design = _design(spec, train.x)
        a = design.T @ (arr[:, None] * design)
        if spec.kind == "ridge":
            a = a + spec.ridge_lambda * np.eye(design.shape[1])
        try:
            cho = scipy.linalg.cho_factor(a, lower=True)
        except scipy.linalg.LinAlgError as err:
            raise SingularFit("weighted normal equations are singular") from err
        return ParameterVector(scipy.linalg.cho_solve(cho, design.T @ (arr * train.y)))

    info = _mlp_info_for(spec, train)
    if theta0 is None:
        theta0 = _fit_mlp(spec, train, seed, "gauss_newton").theta_hat
    tol = ORACLE_GRAD_TOL * info.y_sd * info.y_sd
    theta, _, _ = _descend(
        lambda th: _mlp_loss_value(th, info, train.x, train.y, arr),
        lambda th: _mlp_loss_value_grad(th, info, train.x, train.y, arr),
        theta0.values,
        tol,
        ORACLE_MAX_ITER,
    )
    return ParameterVector(theta)


__all__ = [
    "WeightVector",
    "InfluencePack",
    "sample_dirichlet",
    "dirichlet_rows",
    "influence_pack",
    "perturb_parameters",
    "linearized_prediction",
    "retrain_oracle",
]
