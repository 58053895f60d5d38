"""Metrics, repeated-seed aggregation, interval series and model comparison."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (Dataset, split_chrono, synthetic_drive_generate, toy_eval_grid,
                   toy_generate)
from .ensemble import (DivergenceError, Ensemble, EnsembleConfig, predictive,
                       set_residual_var, train_ensemble)
from .nn_core import NLL_CONST
from .optimizer import LrGrid, lr_grid_search

log = logging.getLogger(__name__)

MODEL_KINDS = ("ensemble_nll", "ensemble_mse", "single_nll", "single_mse")
REPORT_SCHEMA = "soc-ensemble-metrics/1"
# seed offsets: run r uses base_seed + RUN_STRIDE * r; members add their index
RUN_STRIDE = 1000
TOY_TEST_OFFSET = 500_000


def rmse_metric(mus, ys) -> float:
    mus = np.asarray(mus, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if mus.size == 0 or mus.shape != ys.shape:
        raise ValueError("eval: rmse needs equal nonempty lengths")
    return float(np.sqrt(np.mean((ys - mus) ** 2)))


def nll_metric(mus, sigma2s, ys) -> float:
    """Mean Gaussian NLL including the 0.5*log(2*pi) constant."""
    mus = np.asarray(mus, dtype=float)
    s2 = np.asarray(sigma2s, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if mus.size == 0 or not (mus.shape == s2.shape == ys.shape):
        raise ValueError("eval: nll needs equal nonempty lengths")
    if np.any(~(s2 > 0)):
        raise ValueError("eval: every sigma2 must be > 0")
    r = ys - mus
    return float(np.mean(0.5 * np.log(s2) + r * r / (2.0 * s2) + NLL_CONST))


@dataclass
class IntervalSeries:
    index: np.ndarray
    y_true: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    x: np.ndarray | None = None

    def __len__(self):
        return len(self.index)

    def to_csv(self, path) -> None:
        header = ["index", "y_true", "mu", "sigma"] + (["x"] if self.x is not None else [])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                row = [int(self.index[i]), repr(float(self.y_true[i])),
                       repr(float(self.mu[i])), repr(float(self.sigma[i]))]
                if self.x is not None:
                    row.append(repr(float(self.x[i])))
                w.writerow(row)


def coverage(series: IntervalSeries, k: float) -> float:
    """Fraction of rows with |y_true - mu| <= k * sigma."""
    if len(series) == 0:
        raise ValueError("eval: empty series")
    return float(np.mean(np.abs(series.y_true - series.mu) <= k * series.sigma))


@dataclass
class MetricReport:
    dataset_id: str
    model_kind: str
    runs: list[dict] = field(default_factory=list)
    failed: list[dict] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in sorted(self.runs, key=lambda r: r["run"])])

    def aggregate(self) -> dict[str, dict[str, float]]:
        # population std, reduced in run order
        return {m: {"mean": float(np.mean(self.values(m))), "std": float(np.std(self.values(m)))}
                for m in ("nll", "rmse")}

    def check(self, stored: dict | None = None, tol: float = 1e-12) -> bool:
        """True when ``stored`` aggregates match a recomputation from per-run values."""
        stored = stored or self.aggregate()
        fresh = self.aggregate()
        return all(abs(stored[m][s] - fresh[m][s]) <= tol * max(1.0, abs(fresh[m][s]))
                   for m in fresh for s in ("mean", "std"))

    def cell(self, metric: str) -> str:
        a = self.aggregate()[metric]
        return f"{a['mean']:.2f} ± {a['std']:.2f}"

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "dataset_id": self.dataset_id,
                "model_kind": self.model_kind, "n_ok": len(self.runs),
                "n_failed": len(self.failed), "runs": sorted(self.runs, key=lambda r: r["run"]),
                "failed": sorted(self.failed, key=lambda r: r["run"]),
                "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        return cls(d["dataset_id"], d["model_kind"], list(d["runs"]), list(d["failed"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def render_table(reports: list[MetricReport]) -> str:
    """Plain-text table, one row per report, cells as 'mean ± std'."""
    rows = [("Dataset", "Model", "NLL", "RMSE", "Runs")]
    for r in reports:
        runs = f"{len(r.runs)}" + (f" ({len(r.failed)} failed)" if r.failed else "")
        rows.append((r.dataset_id, r.model_kind, r.cell("nll"), r.cell("rmse"), runs))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Task:
    """What one repeated run trains and evaluates.

    ``source`` is "dataset" (fixed ``data``, split chronologically),
    "fixed" (``data`` trains, ``test_data`` evaluates), "toy" (fresh toy
    train set plus an independent toy test set per run) or "synthetic"
    (fresh simulated drive per run, split chronologically).
    """

    source: str
    config: EnsembleConfig
    model_kind: str = "ensemble_nll"
    data: Dataset | None = None
    test_data: Dataset | None = None
    dataset_id: str = ""
    train_frac: float = 0.8
    toy_n: int = 1000
    drive_duration_s: float = 1800.0


def prepare_data(task: Task, seed: int) -> tuple[Dataset, Dataset]:
    if task.source == "dataset":
        return split_chrono(task.data, task.train_frac)
    if task.source == "fixed":
        return replace(task.data, split="train"), replace(task.test_data, split="test")
    if task.source == "toy":
        train = replace(toy_generate(task.toy_n, seed=seed), split="train")
        test = replace(toy_generate(task.toy_n, seed=seed + TOY_TEST_OFFSET), split="test")
        return train, test
    if task.source == "synthetic":
        return split_chrono(synthetic_drive_generate(task.drive_duration_s, seed=seed), task.train_frac)
    raise ValueError(f"eval: unknown data source {task.source!r}")


def _kind_config(config: EnsembleConfig, kind: str, seed: int) -> EnsembleConfig:
    if kind not in MODEL_KINDS:
        raise ValueError(f"eval: unknown model kind {kind!r}")
    scope, loss = kind.split("_")
    return replace(config, loss=loss, base_seed=seed,
                   m_members=1 if scope == "single" else config.m_members)


def evaluate_model(ens: Ensemble, test: Dataset) -> tuple[float, float]:
    mu, s2 = predictive(ens, test.X)
    return nll_metric(mu, s2, test.y), rmse_metric(mu, test.y)


def _one_run(args):
    task, run, seed = args
    try:
        train, test = prepare_data(task, seed)
        ens = train_ensemble(train, _kind_config(task.config, task.model_kind, seed))
        nll, rmse = evaluate_model(ens, test)
        if not (math.isfinite(nll) and math.isfinite(rmse)):
            raise FloatingPointError("non-finite metric")
    except (DivergenceError, FloatingPointError) as exc:
        return {"run": run, "seed": seed, "error": str(exc)}
    return {"run": run, "seed": seed, "nll": nll, "rmse": rmse}


def run_repeated(task: Task, n_runs: int, base_seed: int = 0, jobs: int = 1) -> MetricReport:
    """Train/evaluate ``n_runs`` times with seeds base_seed + 1000*r.

    Diverged runs are excluded from the aggregate and listed in ``failed``.
    """
    if n_runs < 2:
        raise ValueError("eval: run_repeated needs n_runs >= 2")
    args = [(task, r, base_seed + RUN_STRIDE * r) for r in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_runs)) as pool:
            results = list(pool.map(_one_run, args))
    else:
        results = [_one_run(a) for a in args]
    results.sort(key=lambda r: r["run"])
    report = MetricReport(task.dataset_id or task.source, task.model_kind,
                          [r for r in results if "error" not in r],
                          [r for r in results if "error" in r])
    for f in report.failed:
        log.warning("run %d (seed %d) failed: %s", f["run"], f["seed"], f["error"])
    if not report.runs:
        raise RuntimeError(f"eval: all {n_runs} runs failed")
    return report


def emit_interval_series(ens: Ensemble, test: Dataset, sample_size: int = 100,
                         seed: int = 0) -> IntervalSeries:
    """Random test rows (without replacement), restored to chronological order."""
    n = len(test)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=min(sample_size, n), replace=False))
    mu, s2 = predictive(ens, test.X[idx])
    return IntervalSeries(idx, test.y[idx], mu, np.sqrt(s2))


def grid_series(ens: Ensemble, grid) -> IntervalSeries:
    """Predictions over a 1-D input grid against the noiseless toy function."""
    grid = np.asarray(grid, dtype=float)
    mu, s2 = predictive(ens, grid.reshape(-1, 1))
    return IntervalSeries(np.arange(grid.size), 10.0 * np.sin(grid), mu, np.sqrt(s2), grid)


def compare_models(train: Dataset, test: Dataset, config: EnsembleConfig,
                   jobs: int = 1) -> tuple[dict[str, tuple[float, float]], dict[str, Ensemble]]:
    """(nll, rmse) for ensemble/single x nll/mse trained models on one split.

    The single network is member 0 of the matching ensemble, so both share
    the split, the seed and the training run. Mean-only models get the
    variance of their own training residuals as constant predictive variance.
    """
    table, models = {}, {}
    for loss in ("nll", "mse"):
        ens = train_ensemble(train, replace(config, loss=loss), jobs=jobs)
        single = ens.subset(0)
        if loss == "mse":
            set_residual_var(single, train)
        for scope, model in (("ensemble", ens), ("single", single)):
            kind = f"{scope}_{loss}"
            table[kind] = evaluate_model(model, test)
            models[kind] = model
    return table, models


def render_comparison(table: dict[str, tuple[float, float]]) -> str:
    lines = ["Model    | trained on | NLL      | RMSE", "---------+------------+----------+---------"]
    for kind in MODEL_KINDS:
        scope, loss = kind.split("_")
        nll, rmse = table[kind]
        lines.append(f"{scope:<8} | {loss:<10} | {nll:8.4f} | {rmse:8.4f}")
    return "\n".join(lines) + "\n"


def toy_extrapolation_summary(ens: Ensemble, single: Ensemble, grid=None) -> dict:
    """Mean predicted sigma inside and outside the toy training support."""
    grid = toy_eval_grid() if grid is None else np.asarray(grid)
    out = {}
    for name, model in (("ensemble", ens), ("single", single)):
        s = grid_series(model, grid).sigma
        out[name] = {
            "sigma_mean_x4_6": float(s[(grid >= 4) & (grid <= 6)].mean()),
            "sigma_mean_xm2_2": float(s[(grid >= -2) & (grid <= 2)].mean()),
            "sigma_mean_xm2.5_m0.5": float(s[(grid >= -2.5) & (grid <= -0.5)].mean()),
            "sigma_mean_x0.5_2.5": float(s[(grid >= 0.5) & (grid <= 2.5)].mean()),
        }
    return out


def tune_lr(train: Dataset, config: EnsembleConfig, grid: LrGrid | None = None,
            iterations: int = 2000, jobs: int = 1) -> tuple[float, dict[float, float]]:
    """Grid-search the learning rate on the training split only.

    Each candidate trains on the first 80% of ``train`` for ``iterations``
    steps and is scored by NLL on the chronologically last 20%.
    """
    fit, val = split_chrono(train, 0.8)
    fit = replace(fit, split="train")

    def score(lr: float) -> float:
        ens = train_ensemble(fit, replace(config, lr=lr, iterations=iterations), jobs=jobs)
        mu, s2 = predictive(ens, val.X)
        return nll_metric(mu, s2, val.y)

    return lr_grid_search(grid or LrGrid(), score)
