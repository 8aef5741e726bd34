import numpy as np
import pytest

from confbb import Dataset, ModelSpec, fit_erm


def _mlp_dataset():
    rng = np.random.default_rng(1234)
    x = rng.uniform(-1.0, 1.0, size=(60, 2))
    y = np.sin(2.0 * x[:, 0]) + 0.5 * x[:, 1] + 0.1 * rng.standard_normal(60)
    return Dataset(x, y, "train")


@pytest.fixture(scope="session")
def fitted_mlp():
    ds = _mlp_dataset()
    return fit_erm(ModelSpec(kind="mlp", hidden_width=8), ds, seed=5), ds


@pytest.fixture(scope="session")
def fitted_by_kind(fitted_mlp):
    rng = np.random.default_rng(77)
    x = rng.standard_normal((40, 2))
    y = x @ np.array([1.5, -0.5]) + 0.2 * rng.standard_normal(40)
    linear_ds = Dataset(x, y, "train")
    cache = {
        "linear": (fit_erm(ModelSpec(kind="linear"), linear_ds), linear_ds),
        "ridge": (fit_erm(ModelSpec(kind="ridge", ridge_lambda=0.2), linear_ds), linear_ds),
        "mlp": fitted_mlp,
    }

    def get(kind):
        return cache[kind]

    return get
