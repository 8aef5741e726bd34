"""Predictive ensembles at query points and the metrics computed from them.

An ensemble is B linearized predictions under independent Dirichlet weight
draws. Intervals come from empirical quantiles of the samples, optionally
widened by Gaussian observation noise at the fitted residual scale; the
predictive density for the log score is a B-component normal mixture whose
common bandwidth is that same noise scale (floored to avoid degeneracy).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .bootstrap import InfluencePack, dirichlet_rows
from .errors import InvalidParameter, ShapeError
from .models import FittedModel, predictions_and_gradients

LOG_SCORE_FLOOR_REL = 1e-3
_ABS_SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictiveEnsemble:
    """Linearized predictions at one query point plus the observation-noise scale."""

    samples: np.ndarray
    sigma_hat: float
    alpha: float | None
    x_query: np.ndarray
    scale_floor: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ShapeError(f"samples must be a nonempty 1-d vector, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidParameter("ensemble contains non-finite samples")
        if self.sigma_hat < 0:
            raise InvalidParameter("sigma_hat must be >= 0")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "x_query", np.atleast_1d(np.asarray(self.x_query, dtype=float)))

    @property
    def size(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class PredictionInterval:
    lo: float
    hi: float
    level: float

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise InvalidParameter(f"level must lie in (0, 1), got {self.level}")
        if self.lo > self.hi:
            raise InvalidParameter(f"interval endpoints out of order: [{self.lo}, {self.hi}]")

    def contains(self, y: float) -> bool:
        return self.lo <= y <= self.hi


def linear_response(model: FittedModel, pack: InfluencePack, x: np.ndarray):
    """Per-query response of the linearized prediction to weight perturbations.

    Returns (yhat, s) with yhat[j] = f(x_j) and s[j] = G H^{-1} grad f(x_j),
    so a weight draw w maps to the sample yhat[j] - (w - 1/n) @ s[j]. This is
    the same value as perturbing the parameters and linearizing, computed
    without materializing theta_w.
    """
    yhat, grads = predictions_and_gradients(model, x)
    solved = pack.hessian_ref.solve(grads.T)
    return yhat, (pack.centered_grads @ solved).T


def ensemble_samples(yhat_j: float, s_j: np.ndarray, alpha: float, b: int, rng: np.random.Generator) -> np.ndarray:
    """B linearized predictions for one query point under fresh Dirichlet draws."""
    n = s_j.shape[0]
    w = dirichlet_rows(alpha, n, b, rng)
    return yhat_j - (w - 1.0 / n) @ s_j


def build_ensemble(
    model: FittedModel,
    pack: InfluencePack,
    x,
    alpha: float,
    b: int,
    rng: np.random.Generator,
) -> PredictiveEnsemble:
    """Draw B Dirichlet(alpha) weight vectors and collect the linearized predictions at x."""
    if b < 2:
        raise InvalidParameter(f"ensemble size must be >= 2, got {b}")
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidParameter(f"alpha must be a positive real, got {alpha!r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    yhat, s = linear_response(model, pack, x[None, :])
    samples = ensemble_samples(float(yhat[0]), s[0], alpha, b, rng)
    return PredictiveEnsemble(
        samples=samples,
        sigma_hat=model.sigma_hat,
        alpha=float(alpha),
        x_query=x,
        scale_floor=LOG_SCORE_FLOOR_REL * model.target_sd,
    )


def quantile_pair(samples: np.ndarray, level: float):
    """Central interval endpoints by linear interpolation between order statistics."""
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def interval(
    ens: PredictiveEnsemble,
    level: float,
    include_noise: bool = True,
    rng: np.random.Generator | None = None,
) -> PredictionInterval:
    """Empirical central interval, optionally with one noise draw added per sample.

    Noise draws come from ``rng``, a stream the caller keeps separate from
    the weight-sampling stream.
    """
    if not 0.0 < level < 1.0:
        raise InvalidParameter(f"level must lie in (0, 1), got {level}")
    samples = ens.samples
    if include_noise:
        if rng is None:
            raise InvalidParameter("include_noise=True requires an rng for the noise stream")
        samples = samples + ens.sigma_hat * rng.standard_normal(ens.size)
    lo, hi = quantile_pair(samples, level)
    return PredictionInterval(lo, hi, level)


def empirical_coverage(intervals: Sequence[PredictionInterval], targets) -> float:
    """Fraction of targets falling inside their intervals."""
    targets = np.asarray(targets, dtype=float)
    if len(intervals) != targets.shape[0]:
        raise ShapeError(f"{len(intervals)} intervals but {targets.shape[0]} targets")
    if len(intervals) == 0:
        raise InvalidParameter("coverage of an empty collection is undefined")
    hits = sum(iv.contains(float(y)) for iv, y in zip(intervals, targets))
    return hits / len(intervals)


def mixture_logpdf(samples: np.ndarray, scale: float, y: float) -> float:
    """Log density at y of an equal-weight normal mixture centered on the samples."""
    z = (y - samples) / scale
    return float(
        logsumexp(-0.5 * z * z)
        - np.log(samples.shape[0])
        - 0.5 * np.log(2.0 * np.pi)
        - np.log(scale)
    )


def effective_scale(ens: PredictiveEnsemble) -> float:
    return max(ens.sigma_hat, ens.scale_floor, _ABS_SCALE_FLOOR)


def log_score(ens: PredictiveEnsemble, y: float) -> float:
    """Log predictive density at y under the ensemble's normal-mixture density."""
    return mixture_logpdf(ens.samples, effective_scale(ens), float(y))


def average_log_score(ensembles: Sequence[PredictiveEnsemble], targets) -> float:
    """Mean per-point log score over paired ensembles and targets."""
    targets = np.asarray(targets, dtype=float)
    if len(ensembles) != targets.shape[0]:
        raise ShapeError(f"{len(ensembles)} ensembles but {targets.shape[0]} targets")
    if len(ensembles) == 0:
        raise InvalidParameter("average log score of an empty collection is undefined")
    return float(np.mean([log_score(e, float(y)) for e, y in zip(ensembles, targets)]))


def point_scores(
    yhat: np.ndarray,
    s: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    sigma: float,
    floor: float,
    b: int,
    seed_seq: np.random.SeedSequence,
    level: float,
):
    """Per-point log densities and interval containment over a batch of query points.

    One weight matrix of B Dirichlet draws is shared by every point in the
    batch (each point's ensemble keeps the exact marginal law; sharing acts
    as common random numbers across points), while observation noise uses
    one independent index-derived stream per point. Streams are spawned in
    a fixed order, so results do not depend on evaluation order or thread
    count.
    """
    m = targets.shape[0]
    n = s.shape[1]
    scale = max(sigma, floor, _ABS_SCALE_FLOOR)
    w_ss, eps_root = seed_seq.spawn(2)
    w = dirichlet_rows(alpha, n, b, np.random.default_rng(w_ss))
    samples = yhat[None, :] - (w - 1.0 / n) @ s.T  # (B, m)

    z = (targets[None, :] - samples) / scale
    logpdfs = logsumexp(-0.5 * z * z, axis=0) - np.log(b) - 0.5 * np.log(2.0 * np.pi) - np.log(scale)

    eps_children = eps_root.spawn(m)
    noise = np.column_stack([sigma * np.random.default_rng(ss).standard_normal(b) for ss in eps_children])
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples + noise, [tail, 1.0 - tail], axis=0, method="linear")
    contains = (lo <= targets) & (targets <= hi)
    return np.asarray(logpdfs, dtype=float), contains
