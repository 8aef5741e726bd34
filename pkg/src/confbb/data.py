"""Supervised datasets with partition roles, plus train-statistics standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, ShapeError

ROLES = ("train", "val", "test")


@dataclass(frozen=True)
class Dataset:
    """Paired inputs/targets tagged with their partition role.

    ``x`` has shape (n, p) — p may be 0 for intercept-only models — and
    ``y`` has shape (n,). The role tag lets downstream code enforce that
    validation targets never leak into test metrics.
    """

    x: np.ndarray
    y: np.ndarray
    role: str = "train"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be 2-d (n, p), got shape {x.shape}")
        if y.ndim != 1:
            raise ShapeError(f"targets must be 1-d, got shape {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if x.shape[0] == 0:
            raise InvalidParameter("dataset is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidParameter("dataset contains non-finite values")
        if self.role not in ROLES:
            raise InvalidParameter(f"role must be one of {ROLES}, got {self.role!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def with_role(self, role: str) -> "Dataset":
        return Dataset(self.x, self.y, role)


@dataclass(frozen=True)
class Standardizer:
    """Affine rescaling fitted on a training split and applied to every split.

    Zero-variance columns keep scale 1 so the transform stays invertible.
    """

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        x_mean = train.x.mean(axis=0)
        x_sd = train.x.std(axis=0)
        x_sd = np.where(x_sd > 0, x_sd, 1.0)
        y_sd = float(train.y.std())
        return cls(x_mean, x_sd, float(train.y.mean()), y_sd if y_sd > 0 else 1.0)

    def transform(self, ds: Dataset) -> Dataset:
        x = (ds.x - self.x_mean) / self.x_sd
        y = (ds.y - self.y_mean) / self.y_sd
        return Dataset(x, y, ds.role)

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        return self.y_mean + self.y_sd * np.asarray(y)
