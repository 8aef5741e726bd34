"""Command-line entry point: benchmark suite, calibration, oracle comparison,
consistency diagnostic, and the dropout comparison.

Configs are flat JSON objects; unknown keys are hard errors. Every command
writes a manifest whose digest can be recomputed from the stored resolved
config. Volatile wall-clock timings live in the manifest, never in
results.csv, so reruns with the same config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import DropoutConfig, dropout_ensemble
from .benchmarks import (
    TABLE_ORDER,
    BenchmarkResult,
    ExperimentConfig,
    default_noise_sd,
    derive_row_seed,
    evaluate_test_metrics,
    generate_dataset,
    get_function,
    prepare_task,
    run_suite,
)
from .bootstrap import (
    influence_pack,
    linearized_prediction,
    perturb_parameters,
    retrain_oracle,
    sample_dirichlet,
)
from .calibration import AlphaGrid, consistency_diagnostic, tune_alpha
from .data import Dataset
from .errors import ConfbbError
from .models import ModelSpec, fit_erm, predict_with
from .predictive import build_ensemble, interval, log_score

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2

BENCH_COLUMNS = ["function", "dim", "method", "alpha_hat", "coverage", "log_score", "runtime_s", "seed"]


class ConfigError(ConfbbError):
    """Malformed configuration; the message names the offending key."""


# ---------------------------------------------------------------------------
# Config schemas
# ---------------------------------------------------------------------------


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _nonneg_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


_MODEL_KEYS = {
    "model": (lambda v: v in ("linear", "ridge", "mlp"), "one of linear|ridge|mlp", "mlp"),
    "hidden_width": (_pos_int, "a positive integer", 32),
    "ridge_lambda": (lambda v: _is_number(v) and v >= 0, "a nonnegative number", 0.0),
    "fit_intercept": (lambda v: isinstance(v, bool), "a boolean", True),
}

_TUNING_KEYS = {
    "grid": (
        lambda v: isinstance(v, list) and len(v) >= 1 and all(_is_number(a) and a > 0 for a in v),
        "a list of positive numbers",
        None,
    ),
    "nominal_level": (lambda v: _is_number(v) and 0 < v < 1, "a number in (0, 1)", ...),
    "criterion": (lambda v: v in ("log_score", "coverage"), "log_score or coverage", ...),
}

# value: (check, description, default); default ... means required.
SCHEMAS: dict[str, dict] = {
    "bench": {
        "functions": (
            lambda v: isinstance(v, list) and len(v) >= 1 and all(isinstance(s, str) for s in v),
            "a list of function names",
            list(TABLE_ORDER),
        ),
        "n_train": (_pos_int, "a positive integer", ...),
        "n_val": (_pos_int, "a positive integer", ...),
        "n_test": (_pos_int, "a positive integer", ...),
        "noise_sd": (lambda v: v == "auto" or (_is_number(v) and v >= 0), "'auto' or a nonnegative number", "auto"),
        "B_cal": (_pos_int, "a positive integer", ...),
        "B_test": (_pos_int, "a positive integer", ...),
        "seed": (_nonneg_int, "a nonnegative integer", ...),
        **_MODEL_KEYS,
        **_TUNING_KEYS,
    },
    "calibrate": {
        "function": (lambda v: isinstance(v, str), "a function name", ...),
        "n_train": (_pos_int, "a positive integer", ...),
        "n_val": (_pos_int, "a positive integer", ...),
        "noise_sd": (lambda v: v == "auto" or (_is_number(v) and v >= 0), "'auto' or a nonnegative number", "auto"),
        "B_cal": (_pos_int, "a positive integer", ...),
        "seed": (_nonneg_int, "a nonnegative integer", ...),
        **_MODEL_KEYS,
        **_TUNING_KEYS,
    },
    "oracle-compare": {
        "task": (lambda v: v in ("scalar_mean", "linear", "mlp"), "one of scalar_mean|linear|mlp", ...),
        "n_train": (_pos_int, "a positive integer", ...),
        "n_features": (_pos_int, "a positive integer", 3),
        "function": (lambda v: isinstance(v, str), "a function name", "Forrester"),
        "hidden_width": (_pos_int, "a positive integer", 16),
        "noise_sd": (lambda v: v == "auto" or (_is_number(v) and v >= 0), "'auto' or a nonnegative number", 1.0),
        "alpha": (lambda v: _is_number(v) and v > 0, "a positive number", 1.0),
        "draws": (_pos_int, "a positive integer", ...),
        "t": (lambda v: _is_number(v) and v > 0, "a positive number", 0.02),
        "n_directions": (_pos_int, "a positive integer", 50),
        "n_query": (_pos_int, "a positive integer", 11),
        "B_ref": (_pos_int, "a positive integer", 500),
        "seed": (_nonneg_int, "a nonnegative integer", ...),
    },
    "consistency": {
        "function": (lambda v: isinstance(v, str), "a function name", ...),
        "n_train": (_pos_int, "a positive integer", ...),
        "n_test": (_pos_int, "a positive integer", ...),
        "val_sizes": (
            lambda v: isinstance(v, list) and len(v) >= 1 and all(_pos_int(a) for a in v),
            "a list of positive integers",
            ...,
        ),
        "replications": (_pos_int, "a positive integer", ...),
        "noise_sd": (lambda v: v == "auto" or (_is_number(v) and v >= 0), "'auto' or a nonnegative number", "auto"),
        "B": (_pos_int, "a positive integer", 300),
        "seed": (_nonneg_int, "a nonnegative integer", ...),
        **_MODEL_KEYS,
        **_TUNING_KEYS,
    },
    "compare-dropout": {
        "function": (lambda v: isinstance(v, str), "a function name", ...),
        "n_train": (_pos_int, "a positive integer", ...),
        "n_val": (_pos_int, "a positive integer", ...),
        "n_test": (_pos_int, "a positive integer", ...),
        "noise_sd": (lambda v: v == "auto" or (_is_number(v) and v >= 0), "'auto' or a nonnegative number", "auto"),
        "B_cal": (_pos_int, "a positive integer", ...),
        "B_test": (_pos_int, "a positive integer", ...),
        "dropout_p": (lambda v: _is_number(v) and 0 <= v < 1, "a number in [0, 1)", 0.1),
        "dropout_T": (_pos_int, "a positive integer", 1000),
        "hidden_width": (_pos_int, "a positive integer", 32),
        "seed": (_nonneg_int, "a nonnegative integer", ...),
        **_TUNING_KEYS,
    },
}


def load_config(path: str, command: str, seed_override: int | None = None) -> dict:
    """Read, validate, and resolve a flat JSON config for one command."""
    schema = SCHEMAS[command]
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
    resolved = {}
    for key, (check, description, default) in schema.items():
        if key in raw:
            value = raw[key]
        elif default is ...:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            value = default
        if value is not None and not check(value):
            raise ConfigError(f"config key {key!r} must be {description}, got {value!r}")
        resolved[key] = value
    if seed_override is not None:
        resolved["seed"] = int(seed_override)
    if "criterion" in resolved and resolved["criterion"] == "coverage" and resolved.get("nominal_level") is None:
        raise ConfigError("config key 'nominal_level' is required for the coverage criterion")
    return resolved


def _model_spec(cfg: dict) -> ModelSpec:
    return ModelSpec(
        kind=cfg.get("model", "mlp"),
        ridge_lambda=float(cfg.get("ridge_lambda", 0.0)),
        hidden_width=int(cfg.get("hidden_width", 32)),
        fit_intercept=bool(cfg.get("fit_intercept", True)),
    )


def _grid(cfg: dict) -> AlphaGrid:
    if cfg.get("grid") is None:
        return AlphaGrid.default()
    return AlphaGrid(np.asarray(sorted(cfg["grid"]), dtype=float))


def _noise_sd(cfg: dict, function: str) -> float:
    if cfg["noise_sd"] == "auto":
        return default_noise_sd(get_function(function))
    return float(cfg["noise_sd"])


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------


def _fmt_metric(v: float | None) -> str:
    return "" if v is None else format(float(v), ".6g")


def _fmt_full(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(out_dir: Path, config: dict, timings: dict | None = None) -> None:
    manifest = {
        "config_digest": _digest(config),
        "seed": config.get("seed"),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "tool_version": __version__,
        "resolved_config": config,
        "timings_s": timings or {},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def verify_manifest(path: Path) -> bool:
    manifest = json.loads(path.read_text(encoding="utf-8"))
    return _digest(manifest["resolved_config"]) == manifest["config_digest"]


def _write_csv(path: Path, columns: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _bench_row(r: BenchmarkResult) -> list[str]:
    # runtime_s is deliberately blank: wall clock lives in the manifest so
    # results.csv stays byte-stable across reruns.
    return [
        r.function,
        "" if r.dim is None else str(r.dim),
        "ifbb",
        _fmt_full(r.alpha_hat),
        _fmt_metric(r.coverage),
        _fmt_metric(r.log_score),
        "",
        "" if r.seed is None else str(r.seed),
    ]


def _csv_value(text: str) -> float | int | str | None:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def _rows_to_json(columns: list[str], rows: list[list[str]]) -> list[dict]:
    return [{c: _csv_value(v) for c, v in zip(columns, row)} for row in rows]


def _write_results(out_dir: Path, columns: list[str], rows: list[list[str]], stem: str = "results") -> None:
    _write_csv(out_dir / f"{stem}.csv", columns, rows)
    payload = {"columns": columns, "rows": _rows_to_json(columns, rows)}
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_bench(config_path: str, out_dir: str, seed: int | None = None, threads: int | None = None) -> int:
    """Run the benchmark suite and write results.csv / results.json / manifest.json."""
    try:
        cfg = load_config(config_path, "bench", seed)
        for name in cfg["functions"]:
            get_function(name)
    except ConfbbError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = _model_spec(cfg)
    grid = _grid(cfg)
    configs = [
        ExperimentConfig(
            function=name,
            n_train=cfg["n_train"],
            n_val=cfg["n_val"],
            n_test=cfg["n_test"],
            noise_sd=_noise_sd(cfg, name),
            model=spec,
            grid=grid,
            b_cal=cfg["B_cal"],
            b_test=cfg["B_test"],
            nominal_level=cfg["nominal_level"],
            criterion=cfg["criterion"],
            seed=derive_row_seed(cfg["seed"], k),
        )
        for k, name in enumerate(cfg["functions"])
    ]
    suite = run_suite(configs, max_workers=threads)
    rows = [_bench_row(r) for r in suite.rows]
    if suite.average is not None:
        rows.append(_bench_row(suite.average))
    _write_results(out, BENCH_COLUMNS, rows)
    timings = {r.function: round(r.runtime_s, 6) for r in suite.rows}
    if suite.average is not None:
        timings["Average"] = round(suite.average.runtime_s, 6)
    write_manifest(out, cfg, timings)
    for name, message in suite.failures:
        print(f"confbb: row failed: {name}: {message}", file=sys.stderr)
    return EXIT_PARTIAL if suite.failures else EXIT_OK


def cmd_calibrate(config_path: str, out_dir: str, seed: int | None = None, threads: int | None = None) -> int:
    """Tune the concentration on one task and write the score curve plus the selection."""
    try:
        cfg = load_config(config_path, "calibrate", seed)
        get_function(cfg["function"])
    except ConfbbError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = ExperimentConfig(
        function=cfg["function"],
        n_train=cfg["n_train"],
        n_val=cfg["n_val"],
        n_test=1,
        noise_sd=_noise_sd(cfg, cfg["function"]),
        model=_model_spec(cfg),
        grid=_grid(cfg),
        b_cal=cfg["B_cal"],
        b_test=2,
        nominal_level=cfg["nominal_level"],
        criterion=cfg["criterion"],
        seed=cfg["seed"],
    )
    task = prepare_task(exp)
    t0 = time.perf_counter()
    model = fit_erm(exp.model, task.train, seed=task.fit_seed)
    pack = influence_pack(model)
    result = tune_alpha(
        model,
        pack,
        task.val,
        exp.grid,
        criterion=exp.criterion,
        nominal_level=exp.nominal_level,
        b=exp.b_cal,
        rng=np.random.default_rng(task.ss_tune),
    )
    elapsed = time.perf_counter() - t0
    columns = ["alpha", "score", "selected"]
    rows = [
        [_fmt_full(a), _fmt_full(s), "true" if float(a) == result.alpha_hat else "false"]
        for a, s in zip(result.grid.values, result.scores)
    ]
    _write_results(out, columns, rows, stem="curve")
    summary = {
        "alpha_hat": result.alpha_hat,
        "criterion": result.criterion,
        "nominal_level": result.nominal_level,
        "scores": [float(s) for s in result.scores],
        "grid": [float(a) for a in result.grid.values],
    }
    if result.coverages is not None:
        summary["coverages"] = [float(c) for c in result.coverages]
    (out / "alpha_hat.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, cfg, {"calibrate": round(elapsed, 6)})
    return EXIT_OK


def _oracle_task(cfg: dict):
    """Build (spec, train dataset, query points) for the requested comparison task."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0)))
    n = cfg["n_train"]
    if cfg["task"] == "scalar_mean":
        spec = ModelSpec(kind="linear", fit_intercept=True)
        y = 2.0 + float(cfg["noise_sd"] if cfg["noise_sd"] != "auto" else 1.0) * rng.standard_normal(n)
        train = Dataset(np.zeros((n, 0)), y, "train")
        queries = np.zeros((1, 0))
    elif cfg["task"] == "linear":
        p = cfg["n_features"]
        spec = ModelSpec(kind="linear", fit_intercept=False)
        x = rng.standard_normal((n, p))
        beta = rng.standard_normal(p)
        sd = float(cfg["noise_sd"] if cfg["noise_sd"] != "auto" else 1.0)
        train = Dataset(x, x @ beta + sd * rng.standard_normal(n), "train")
        queries = rng.standard_normal((cfg["n_query"], p))
    else:
        f = get_function(cfg["function"])
        sd = _noise_sd(cfg, cfg["function"])
        spec = ModelSpec(kind="mlp", hidden_width=cfg["hidden_width"])
        train = generate_dataset(f, n, sd, rng, "train")
        lo, hi = f.domain[:, 0], f.domain[:, 1]
        steps = np.linspace(0.0, 1.0, cfg["n_query"])
        queries = lo + (hi - lo) * steps[:, None] if f.dim == 1 else lo + (hi - lo) * rng.random((cfg["n_query"], f.dim))
    return spec, train, queries


def _quadratic_ratio(spec, train, model, pack, t: float, n_directions: int, rng) -> float | None:
    """Mean e(2t)/e(t) over random zero-sum directions; None when e(t) is negligible."""
    n = train.n
    uniform = np.full(n, 1.0 / n)
    ratios = []
    for _ in range(n_directions):
        delta = rng.standard_normal(n)
        delta -= delta.mean()
        delta /= np.max(np.abs(delta))
        errs = []
        for scale in (t, 2.0 * t):
            w = uniform + scale * delta
            if np.any(w < 0):
                errs = []
                break
            w = w / w.sum()
            approx = perturb_parameters(pack, model.theta_hat, w)
            exact = retrain_oracle(spec, train, w, theta0=model.theta_hat)
            errs.append(float(np.linalg.norm(approx.values - exact.values)))
        if len(errs) == 2 and errs[1] > 1e-11:
            ratios.append(errs[1] / max(errs[0], 1e-300))
    return float(np.mean(ratios)) if ratios else None


def cmd_oracle_compare(config_path: str, out_dir: str, seed: int | None = None, threads: int | None = None) -> int:
    """Compare influence-perturbed parameters/predictions against full retraining."""
    try:
        cfg = load_config(config_path, "oracle-compare", seed)
        if cfg["task"] == "mlp":
            get_function(cfg["function"])
    except ConfbbError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, train, queries = _oracle_task(cfg)
    t0 = time.perf_counter()
    model = fit_erm(spec, train, seed=int(np.random.SeedSequence((cfg["seed"], 1)).generate_state(1)[0]))
    pack = influence_pack(model)
    alpha = float(cfg["alpha"])
    draw_rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 2)))

    columns = ["draw", "alpha", "param_err", "pred_err"]
    rows = []
    param_errs, pred_errs = [], []
    for k in range(cfg["draws"]):
        w = sample_dirichlet(alpha, train.n, draw_rng)
        theta_if = perturb_parameters(pack, model.theta_hat, w)
        theta_re = retrain_oracle(spec, train, w, theta0=model.theta_hat)
        p_err = float(np.linalg.norm(theta_if.values - theta_re.values))
        diffs = [
            abs(linearized_prediction(model, q, theta_if) - predict_with(model, q, theta_re))
            for q in queries
        ]
        d_err = float(np.mean(diffs))
        param_errs.append(p_err)
        pred_errs.append(d_err)
        rows.append([str(k), _fmt_full(alpha), _fmt_metric(p_err), _fmt_metric(d_err)])
    _write_results(out, columns, rows, stem="discrepancies")

    ratio_rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 3)))
    ratio = _quadratic_ratio(spec, train, model, pack, float(cfg["t"]), cfg["n_directions"], ratio_rng)
    sd_rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 4)))
    pred_sds = [
        float(np.std(build_ensemble(model, pack, q, alpha, cfg["B_ref"], sd_rng).samples))
        for q in queries
    ]
    mean_sd = float(np.mean(pred_sds))
    elapsed = time.perf_counter() - t0
    summary = {
        "task": cfg["task"],
        "alpha": alpha,
        "draws": cfg["draws"],
        "param_err_mean": float(np.mean(param_errs)),
        "param_err_max": float(np.max(param_errs)),
        "pred_err_mean": float(np.mean(pred_errs)),
        "pred_err_max": float(np.max(pred_errs)),
        "predictive_sd_mean": mean_sd,
        "pred_err_over_predictive_sd": float(np.mean(pred_errs)) / mean_sd if mean_sd > 0 else None,
        "quadratic_ratio": ratio,
        "t": float(cfg["t"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, cfg, {"oracle_compare": round(elapsed, 6)})
    return EXIT_OK


def cmd_consistency(config_path: str, out_dir: str, seed: int | None = None, threads: int | None = None) -> int:
    """Validation-vs-test score gap of the tuned concentration across validation sizes."""
    try:
        cfg = load_config(config_path, "consistency", seed)
        get_function(cfg["function"])
        sizes = cfg["val_sizes"]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("config key 'val_sizes' must be strictly increasing")
    except ConfbbError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f = get_function(cfg["function"])
    noise_sd = _noise_sd(cfg, cfg["function"])
    root = np.random.SeedSequence(cfg["seed"])
    ss_train, ss_test, ss_fit, ss_diag = root.spawn(4)
    train = generate_dataset(f, cfg["n_train"], noise_sd, np.random.default_rng(ss_train), "train")
    test = generate_dataset(f, cfg["n_test"], noise_sd, np.random.default_rng(ss_test), "test")

    t0 = time.perf_counter()
    model = fit_erm(_model_spec(cfg), train, seed=int(ss_fit.generate_state(1)[0]))
    pack = influence_pack(model)

    def source(m: int, rng: np.random.Generator) -> Dataset:
        return generate_dataset(f, m, noise_sd, rng, "val")

    rows = consistency_diagnostic(
        model,
        pack,
        _grid(cfg),
        sizes,
        test,
        cfg["replications"],
        source,
        np.random.default_rng(ss_diag),
        b=cfg["B"],
        criterion=cfg["criterion"],
        nominal_level=cfg.get("nominal_level"),
    )
    elapsed = time.perf_counter() - t0
    columns = ["m", "mean_gap", "sd_gap"]
    out_rows = [[str(r.val_size), _fmt_metric(r.mean_gap), _fmt_metric(r.sd_gap)] for r in rows]
    _write_results(out, columns, out_rows, stem="gaps")
    write_manifest(out, cfg, {"consistency": round(elapsed, 6)})
    return EXIT_OK


def cmd_compare_dropout(config_path: str, out_dir: str, seed: int | None = None, threads: int | None = None) -> int:
    """IF-BB and MC-dropout on identical splits; two-row comparison CSV."""
    try:
        cfg = load_config(config_path, "compare-dropout", seed)
        get_function(cfg["function"])
    except ConfbbError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = ExperimentConfig(
        function=cfg["function"],
        n_train=cfg["n_train"],
        n_val=cfg["n_val"],
        n_test=cfg["n_test"],
        noise_sd=_noise_sd(cfg, cfg["function"]),
        model=ModelSpec(kind="mlp", hidden_width=cfg["hidden_width"]),
        grid=_grid(cfg),
        b_cal=cfg["B_cal"],
        b_test=cfg["B_test"],
        nominal_level=cfg["nominal_level"],
        criterion=cfg["criterion"],
        seed=cfg["seed"],
    )
    task = prepare_task(exp)
    split_hash = hashlib.sha256(task.test.x.tobytes() + task.test.y.tobytes()).hexdigest()

    t0 = time.perf_counter()
    model = fit_erm(exp.model, task.train, seed=task.fit_seed)
    pack = influence_pack(model)
    result = tune_alpha(
        model,
        pack,
        task.val,
        exp.grid,
        criterion=exp.criterion,
        nominal_level=exp.nominal_level,
        b=exp.b_cal,
        rng=np.random.default_rng(task.ss_tune),
    )
    cov_if, score_if_std = evaluate_test_metrics(
        model, pack, task.test, result.alpha_hat, exp.b_test, exp.nominal_level, task.ss_eval
    )
    if_runtime = time.perf_counter() - t0

    t1 = time.perf_counter()
    drop_seed = int(np.random.SeedSequence((cfg["seed"], 17)).generate_state(1)[0])
    dcfg = DropoutConfig(p=float(cfg["dropout_p"]), t=cfg["dropout_T"], seed=drop_seed)
    eps_root = np.random.SeedSequence((cfg["seed"], 18))
    eps_children = eps_root.spawn(task.test.n)
    hits = 0
    scores = []
    for j in range(task.test.n):
        ens = dropout_ensemble(model, task.test.x[j], dcfg)
        iv = interval(ens, exp.nominal_level, include_noise=True, rng=np.random.default_rng(eps_children[j]))
        hits += iv.contains(float(task.test.y[j]))
        scores.append(log_score(ens, float(task.test.y[j])))
    cov_drop = hits / task.test.n
    score_drop_std = float(np.mean(scores))
    drop_runtime = time.perf_counter() - t1

    jac = float(np.log(task.scaler.y_sd))
    columns = ["method", "coverage", "log_score", "runtime_s"]
    rows = [
        ["ifbb", _fmt_metric(cov_if), _fmt_metric(score_if_std - jac), _fmt_metric(if_runtime)],
        ["mc_dropout", _fmt_metric(cov_drop), _fmt_metric(score_drop_std - jac), _fmt_metric(drop_runtime)],
    ]
    _write_results(out, columns, rows, stem="comparison")
    summary = {
        "function": cfg["function"],
        "split_hash": split_hash,
        "alpha_hat": result.alpha_hat,
        "dropout_p": float(cfg["dropout_p"]),
        "dropout_T": cfg["dropout_T"],
        "note": "both methods share one fitted network; its fit time is counted in the ifbb runtime",
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, cfg, {"ifbb": round(if_runtime, 6), "mc_dropout": round(drop_runtime, 6)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "bench": cmd_bench,
    "calibrate": cmd_calibrate,
    "oracle-compare": cmd_oracle_compare,
    "consistency": cmd_consistency,
    "compare-dropout": cmd_compare_dropout,
}


def _resolve_threads(threads: int | None) -> int | None:
    if threads is None:
        env = os.environ.get("CONFBB_THREADS")
        if env is None:
            return None
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"CONFBB_THREADS must be an integer, got {env!r}") from None
    if threads < 0:
        raise ConfigError("--threads must be >= 0")
    return os.cpu_count() if threads == 0 else threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confbb", description=__doc__)
    parser.add_argument("--version", action="version", version=f"confbb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _resolve_threads(args.threads)
    except ConfigError as err:
        print(f"confbb: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return _COMMANDS[args.command](args.config, args.out, seed=args.seed, threads=threads)


if __name__ == "__main__":
    sys.exit(main())
