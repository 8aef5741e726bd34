"""Monte Carlo dropout predictive baseline for the fitted MLP.

Masks apply to the input-to-hidden weight matrix only, with the usual
1/(1-p) inference-time rescaling; biases and output weights are never
masked, and the base network is trained without dropout. Forward passes are
packaged as a PredictiveEnsemble so intervals and log scores come from the
same machinery as the bootstrap ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, UnsupportedModel
from .models import FittedModel, _check_input, _mlp_unpack
from .predictive import LOG_SCORE_FLOOR_REL, PredictiveEnsemble


@dataclass(frozen=True)
class DropoutConfig:
    """Drop probability, number of stochastic forward passes, and the mask seed."""

    p: float
    t: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise InvalidParameter(f"drop probability must lie in [0, 1), got {self.p}")
        if self.t < 1:
            raise InvalidParameter("number of forward passes must be >= 1")


def _masked_outputs(model: FittedModel, x: np.ndarray, p: float, t: int, rng: np.random.Generator) -> np.ndarray:
    info = model.mlp_info
    w, b, v, c = _mlp_unpack(model.theta_hat.values, info)
    xs = (x - info.x_mean) / info.x_sd
    keep = rng.random((t,) + w.shape) < (1.0 - p)
    w_eff = (w * keep) / (1.0 - p)
    hidden = np.tanh(w_eff @ xs + b[None, :])
    return info.y_mean + info.y_sd * (hidden @ v + c)


def masked_forward(model: FittedModel, x, cfg: DropoutConfig, rng: np.random.Generator) -> float:
    """One forward pass with a fresh Bernoulli(1-p) mask over the hidden input weights."""
    if model.spec.kind != "mlp":
        raise UnsupportedModel(f"dropout is defined for the mlp model, got {model.spec.kind!r}")
    x = _check_input(model, x)
    return float(_masked_outputs(model, x, cfg.p, 1, rng)[0])


def dropout_ensemble(model: FittedModel, x, cfg: DropoutConfig) -> PredictiveEnsemble:
    """T stochastic forward passes at x, packaged like a bootstrap ensemble.

    The mask stream is seeded from the config alone, so every query point
    sees the same T sampled subnetworks.
    """
    if model.spec.kind != "mlp":
        raise UnsupportedModel(f"dropout is defined for the mlp model, got {model.spec.kind!r}")
    x = _check_input(model, x)
    samples = _masked_outputs(model, x, cfg.p, cfg.t, np.random.default_rng(cfg.seed))
    return PredictiveEnsemble(
        samples=samples,
        sigma_hat=model.sigma_hat,
        alpha=None,
        x_query=x,
        scale_floor=LOG_SCORE_FLOOR_REL * model.target_sd,
    )
