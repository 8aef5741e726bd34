"""Emulation test functions and the end-to-end coverage/log-score experiment runner.

The function definitions follow the standard virtual-library forms
(Surjanovic & Bingham); each is a pure map on a per-coordinate box. The
runner draws uniform synthetic data, standardizes on the training split,
fits the base model, tunes the Dirichlet concentration on validation, and
reports interval coverage and average log score on held-out test targets
in original units.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bootstrap import influence_pack
from .calibration import AlphaGrid, tune_alpha
from .data import Dataset, Standardizer
from .errors import ConfbbError, DomainError, InvalidParameter, ShapeError
from .models import ModelSpec, fit_erm
from .predictive import LOG_SCORE_FLOOR_REL, linear_response, point_scores

_NOISE_EST_SEED = 180_451  # fixed stream: noise level is a property of the function
_NOISE_EST_SAMPLES = 10_000


@dataclass(frozen=True)
class BenchmarkFunction:
    """A named test function on a box domain."""

    name: str
    dim: int
    domain: np.ndarray
    batch_eval: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> float:
        return evaluate_function(self, x)


def evaluate_function(f: BenchmarkFunction, x) -> float:
    """Evaluate at one point, rejecting wrong dimension or out-of-box inputs."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.dim,):
        raise ShapeError(f"{f.name} expects {f.dim}-d inputs, got shape {x.shape}")
    if np.any(x < f.domain[:, 0]) or np.any(x > f.domain[:, 1]):
        raise DomainError(f"point outside the {f.name} domain box")
    return float(f.batch_eval(x[None, :])[0])


def _borehole(x):
    rw, r, tu, hu, tl, hl, length, kw = x.T
    log_ratio = np.log(r / rw)
    frac = 2.0 * length * tu / (log_ratio * rw**2 * kw)
    return 2.0 * np.pi * tu * (hu - hl) / (log_ratio * (1.0 + frac + tu / tl))


def _ishigami(x, a=7.0, b=0.1):
    x1, x2, x3 = x.T
    return np.sin(x1) + a * np.sin(x2) ** 2 + b * x3**4 * np.sin(x1)


def _branin(x):
    x1, x2 = x.T
    b = 5.1 / (4.0 * np.pi**2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


_HARTMANN3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN3_A = np.array([[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]])
_HARTMANN3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
)


def _hartmann3(x):
    sq = (x[:, None, :] - _HARTMANN3_P) ** 2
    inner = np.einsum("ijk,jk->ij", sq, _HARTMANN3_A)
    return -(np.exp(-inner) @ _HARTMANN3_ALPHA)


def _friedman1(x):
    x1, x2, x3, x4, x5 = x.T
    return 10.0 * np.sin(np.pi * x1 * x2) + 20.0 * (x3 - 0.5) ** 2 + 10.0 * x4 + 5.0 * x5


def _friedman2(x):
    x1, x2, x3, x4 = x.T
    return np.sqrt(x1**2 + (x2 * x3 - 1.0 / (x2 * x4)) ** 2)


def _friedman3(x):
    x1, x2, x3, x4 = x.T
    # arctan2 handles the x1 = 0 edge of the box (limit +-pi/2).
    return np.arctan2(x2 * x3 - 1.0 / (x2 * x4), x1)


def _forrester(x):
    t = x[:, 0]
    return (6.0 * t - 2.0) ** 2 * np.sin(12.0 * t - 4.0)


def _currin(x):
    x1, x2 = x.T
    # The x2 floor keeps the x2 = 0 box edge at its limit value (damp -> 1).
    damp = 1.0 - np.exp(-1.0 / (2.0 * np.maximum(x2, 1e-300)))
    num = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    den = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    return damp * num / den


def _park(x):
    x1, x2, x3, x4 = x.T
    head = 0.5 * x1 * (np.sqrt(1.0 + (x2 + x3**2) * x4 / x1**2) - 1.0)
    return head + (x1 + 3.0 * x4) * np.exp(1.0 + np.sin(x3))


def _box(*pairs) -> np.ndarray:
    return np.asarray(pairs, dtype=float)


_UNIT = (0.0, 1.0)
_PI_BOX = (-np.pi, np.pi)

FUNCTIONS: dict[str, BenchmarkFunction] = {
    f.name: f
    for f in [
        BenchmarkFunction(
            "Borehole",
            8,
            _box(
                (0.05, 0.15),
                (100.0, 50_000.0),
                (63_070.0, 115_600.0),
                (990.0, 1110.0),
                (63.1, 116.0),
                (700.0, 820.0),
                (1120.0, 1680.0),
                (9855.0, 12_045.0),
            ),
            _borehole,
        ),
        BenchmarkFunction("Ishigami", 3, _box(_PI_BOX, _PI_BOX, _PI_BOX), _ishigami),
        BenchmarkFunction("Branin", 2, _box((-5.0, 10.0), (0.0, 15.0)), _branin),
        BenchmarkFunction("Hartmann3", 3, _box(_UNIT, _UNIT, _UNIT), _hartmann3),
        BenchmarkFunction("Friedman1", 5, _box(*[_UNIT] * 5), _friedman1),
        BenchmarkFunction(
            "Friedman2",
            4,
            _box((0.0, 100.0), (40.0 * np.pi, 560.0 * np.pi), _UNIT, (1.0, 11.0)),
            _friedman2,
        ),
        BenchmarkFunction(
            "Friedman3",
            4,
            _box((0.0, 100.0), (40.0 * np.pi, 560.0 * np.pi), _UNIT, (1.0, 11.0)),
            _friedman3,
        ),
        BenchmarkFunction("Forrester", 1, _box(_UNIT), _forrester),
        BenchmarkFunction("CurrinExp", 2, _box(_UNIT, _UNIT), _currin),
        # Open at zero in the first coordinate; the tiny positive floor keeps
        # uniform sampling and the formula's 1/x1**2 term well defined.
        BenchmarkFunction("Park", 4, _box((1e-8, 1.0), _UNIT, _UNIT, _UNIT), _park),
    ]
}

TABLE_ORDER = tuple(FUNCTIONS)


def get_function(name: str) -> BenchmarkFunction:
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise InvalidParameter(f"unknown benchmark function {name!r}; known: {sorted(FUNCTIONS)}") from None


def _uniform_inputs(f: BenchmarkFunction, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = f.domain[:, 0], f.domain[:, 1]
    return lo + (hi - lo) * rng.random((n, f.dim))


def generate_dataset(
    f: BenchmarkFunction,
    n: int,
    noise_sd: float,
    rng: np.random.Generator,
    role: str = "train",
) -> Dataset:
    """Uniform inputs on the domain box with Gaussian target noise."""
    if n < 1:
        raise InvalidParameter("n must be >= 1")
    if noise_sd < 0:
        raise InvalidParameter("noise_sd must be >= 0")
    x = _uniform_inputs(f, n, rng)
    y = f.batch_eval(x) + noise_sd * rng.standard_normal(n)
    return Dataset(x, y, role)


def output_sd(f: BenchmarkFunction, n: int = _NOISE_EST_SAMPLES, seed: int = _NOISE_EST_SEED) -> float:
    """Empirical standard deviation of f over uniform domain samples."""
    x = _uniform_inputs(f, n, np.random.default_rng(seed))
    return float(f.batch_eval(x).std())


def default_noise_sd(f: BenchmarkFunction, rel: float = 0.05) -> float:
    return rel * output_sd(f)


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run: data sizes, noise, model, grid, and tuning settings."""

    function: str
    n_train: int
    n_val: int
    n_test: int
    noise_sd: float
    model: ModelSpec
    grid: AlphaGrid
    b_cal: int
    b_test: int
    nominal_level: float
    criterion: str
    seed: int

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise InvalidParameter("all partition sizes must be >= 1")
        if not 0.0 < self.nominal_level < 1.0:
            raise InvalidParameter("nominal_level must lie in (0, 1)")
        if self.noise_sd < 0:
            raise InvalidParameter("noise_sd must be >= 0")
        if min(self.b_cal, self.b_test) < 2:
            raise InvalidParameter("resample counts must be >= 2")


@dataclass(frozen=True)
class BenchmarkResult:
    function: str
    dim: int | None
    coverage: float
    log_score: float
    runtime_s: float
    alpha_hat: float | None
    seed: int | None


@dataclass(frozen=True)
class SuiteResult:
    rows: tuple[BenchmarkResult, ...]
    failures: tuple[tuple[str, str], ...]
    average: BenchmarkResult | None


def default_config(function: str, seed: int, **overrides) -> ExperimentConfig:
    """Default protocol: 100/50/40 split, 5% output-sd noise, width-32 MLP, log-score tuning."""
    f = get_function(function)
    settings = dict(
        function=function,
        n_train=100,
        n_val=50,
        n_test=40,
        noise_sd=default_noise_sd(f),
        model=ModelSpec(kind="mlp", hidden_width=32),
        grid=AlphaGrid.default(),
        b_cal=500,
        b_test=2000,
        nominal_level=0.90,
        criterion="log_score",
        seed=seed,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def derive_row_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((base_seed, index)).generate_state(1, np.uint64)[0])


def default_suite(seed: int) -> list[ExperimentConfig]:
    return [default_config(name, derive_row_seed(seed, k)) for k, name in enumerate(TABLE_ORDER)]


@dataclass(frozen=True)
class PreparedTask:
    """Standardized splits plus the seed tree for the downstream pipeline stages."""

    function: BenchmarkFunction
    scaler: Standardizer
    train: Dataset
    val: Dataset
    test: Dataset
    ss_fit: np.random.SeedSequence
    ss_tune: np.random.SeedSequence
    ss_eval: np.random.SeedSequence

    @property
    def fit_seed(self) -> int:
        return int(self.ss_fit.generate_state(1)[0])


def prepare_task(cfg: ExperimentConfig) -> PreparedTask:
    """Draw the train/val/test splits and standardize them on training statistics."""
    f = get_function(cfg.function)
    root = np.random.SeedSequence(cfg.seed)
    ss_train, ss_val, ss_test, ss_fit, ss_tune, ss_eval = root.spawn(6)
    train = generate_dataset(f, cfg.n_train, cfg.noise_sd, np.random.default_rng(ss_train), "train")
    val = generate_dataset(f, cfg.n_val, cfg.noise_sd, np.random.default_rng(ss_val), "val")
    test = generate_dataset(f, cfg.n_test, cfg.noise_sd, np.random.default_rng(ss_test), "test")
    scaler = Standardizer.fit(train)
    return PreparedTask(
        function=f,
        scaler=scaler,
        train=scaler.transform(train),
        val=scaler.transform(val),
        test=scaler.transform(test),
        ss_fit=ss_fit,
        ss_tune=ss_tune,
        ss_eval=ss_eval,
    )


def evaluate_test_metrics(model, pack, test: Dataset, alpha: float, b: int, level: float, seed_seq):
    """Coverage and mean log score (standardized units) on the test partition."""
    if test.role != "test":
        raise InvalidParameter("test metrics must be computed on a 'test'-tagged dataset")
    yhat, s = linear_response(model, pack, test.x)
    floor = LOG_SCORE_FLOOR_REL * model.target_sd
    logpdfs, contains = point_scores(
        yhat, s, test.y, alpha, model.sigma_hat, floor, b, seed_seq, level
    )
    return float(np.mean(contains)), float(np.mean(logpdfs))


def run_benchmark(cfg: ExperimentConfig) -> BenchmarkResult:
    """Generate splits, fit, tune, and score one benchmark configuration.

    Inputs and targets are standardized on training statistics before
    fitting; coverage is scale-invariant and the log score is mapped back
    to original units through the affine Jacobian. The recorded runtime
    covers fit, calibration, and test evaluation but not data generation.
    """
    try:
        task = prepare_task(cfg)
        if task.val.role != "val":
            raise InvalidParameter("tuning must run on the 'val' partition")

        t0 = time.perf_counter()
        model = fit_erm(cfg.model, task.train, seed=task.fit_seed)
        pack = influence_pack(model)
        result = tune_alpha(
            model,
            pack,
            task.val,
            cfg.grid,
            criterion=cfg.criterion,
            nominal_level=cfg.nominal_level,
            b=cfg.b_cal,
            rng=np.random.default_rng(task.ss_tune),
        )
        coverage, score_std = evaluate_test_metrics(
            model, pack, task.test, result.alpha_hat, cfg.b_test, cfg.nominal_level, task.ss_eval
        )
        runtime = time.perf_counter() - t0
        return BenchmarkResult(
            function=cfg.function,
            dim=task.function.dim,
            coverage=coverage,
            log_score=score_std - float(np.log(task.scaler.y_sd)),
            runtime_s=runtime,
            alpha_hat=result.alpha_hat,
            seed=cfg.seed,
        )
    except ConfbbError as err:
        raise type(err)(f"{cfg.function}: {err}") from err


def suite_average(rows: list[BenchmarkResult]) -> BenchmarkResult | None:
    if not rows:
        return None
    return BenchmarkResult(
        function="Average",
        dim=None,
        coverage=float(np.mean([r.coverage for r in rows])),
        log_score=float(np.mean([r.log_score for r in rows])),
        runtime_s=float(np.mean([r.runtime_s for r in rows])),
        alpha_hat=None,
        seed=None,
    )


def run_suite(cfgs: list[ExperimentConfig], max_workers: int | None = None) -> SuiteResult:
    """Run each configuration, recording per-row failures without aborting the rest.

    Rows are independent (each owns a seed-derived generator tree), so the
    optional thread pool cannot change any numerical output; results are
    assembled in input order.
    """
    if not cfgs:
        raise InvalidParameter("suite requires at least one configuration")
    outcomes: list[BenchmarkResult | Exception] = [None] * len(cfgs)  # type: ignore[list-item]
    if max_workers is not None and max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(run_benchmark, cfg) for cfg in cfgs]
            for k, fut in enumerate(futures):
                try:
                    outcomes[k] = fut.result()
                except ConfbbError as err:
                    outcomes[k] = err
    else:
        for k, cfg in enumerate(cfgs):
            try:
                outcomes[k] = run_benchmark(cfg)
            except ConfbbError as err:
                outcomes[k] = err
    rows = [o for o in outcomes if isinstance(o, BenchmarkResult)]
    failures = [
        (cfg.function, str(o)) for cfg, o in zip(cfgs, outcomes) if isinstance(o, Exception)
    ]
    return SuiteResult(tuple(rows), tuple(failures), suite_average(rows))
