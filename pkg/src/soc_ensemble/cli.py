"""Command-line entry point: gen, train, predict, evaluate, toy-bench, grad-check.

Settings resolve as flags > config file > built-in defaults. The output
directory defaults to $SOC_ENSEMBLE_OUTPUT_DIR, else ./runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .config import ConfigError, RunConfig, load_config, save_config
from .ensemble import load_ensemble, predictive, save_ensemble, train_ensemble
from .evaluation import (IntervalSeries, MetricReport, Task, coverage, emit_interval_series,
                         evaluate_model, render_table, run_repeated, tune_lr)
from .experiments import TOY_BENCH_ITERATIONS, toy_bench, write_toy_bundle
from .nn_core import random_grad_checks

log = logging.getLogger("soc_ensemble")


class CliError(Exception):
    pass


# --- helpers -----------------------------------------------------------------

def _resolve(args, base: RunConfig) -> RunConfig:
    cfg = load_config(args.config, base) if getattr(args, "config", None) else base
    overrides = {}
    for name in ("m_members", "batch_size", "iterations", "lr", "loss", "activation", "seed",
                 "data", "toy_n", "drive_duration_s", "train_frac", "grid_iterations",
                 "n_runs", "sample_size", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "hidden_dims", None):
        overrides["hidden_dims"] = tuple(args.hidden_dims)
    if getattr(args, "grid_search", False):
        overrides["grid_search"] = True
    if getattr(args, "lagged_soc", False):
        overrides["include_lagged_soc"] = True
    return replace(cfg, **overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolved_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cli: cannot create output directory {out}: {exc.strerror}") from None
    return out


def _features(cfg: RunConfig):
    return (*D.TELEMETRY_FEATURES, "soc_lag1") if cfg.include_lagged_soc else None


def _load_source(cfg: RunConfig) -> D.Dataset:
    if cfg.data == "toy":
        return D.toy_generate(cfg.toy_n, seed=cfg.seed)
    if cfg.data == "synthetic":
        ds = D.synthetic_drive_generate(cfg.drive_duration_s, seed=cfg.seed)
        return D.with_lagged_soc(ds) if cfg.include_lagged_soc else ds
    path = Path(cfg.data)
    if not path.is_file():
        raise CliError(f"cli: data file {path} not found")
    schema = D.detect_schema(path)
    return D.load_csv(path, schema, features=_features(cfg) if schema == "telemetry" else None)


def _load_for(ens, path) -> D.Dataset:
    """Load a CSV with the columns an ensemble was trained on."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"cli: input file {path} not found")
    feats = tuple(ens.scaler.feature_names)
    schema = D.detect_schema(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    for col in feats:
        if col != "soc_lag1" and col not in header:
            raise D.SchemaError(f"data: input lacks column {col!r} required by the ensemble's scaler")
    return D.load_csv(path, schema, features=feats)


class _Log:
    """Append-only plain-text log plus a JSON-lines metrics stream."""

    def __init__(self, out: Path):
        self.text = open(out / "train.log", "a", encoding="utf-8")
        self.stream = open(out / "metrics.jsonl", "a", encoding="utf-8")

    def line(self, msg: str):
        self.text.write(msg + "\n")

    def event(self, **kw):
        self.stream.write(json.dumps(kw, sort_keys=True) + "\n")

    def close(self):
        self.text.close()
        self.stream.close()


# --- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.kind == "toy":
        ds = D.toy_generate(args.n, args.x_min, args.x_max, seed=args.seed)
    else:
        ds = D.synthetic_drive_generate(args.duration, seed=args.seed)
    try:
        D.save_csv(ds, args.out)
    except OSError as exc:
        raise CliError(f"cli: cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, RunConfig())
    out = _out_dir(cfg)
    data = _load_source(cfg)
    if data.report is not None:
        (out / "validation.json").write_text(data.report.to_json() + "\n", encoding="utf-8")
    train, test = D.split_chrono(data, cfg.train_frac)
    logf = _Log(out)
    try:
        logf.line(f"data={cfg.data} rows={len(data)} train={len(train)} test={len(test)}")
        if cfg.grid_search:
            chosen, scores = tune_lr(train, cfg.ensemble_config(), iterations=cfg.grid_iterations,
                                     jobs=args.jobs)
            for lr, score in scores.items():
                logf.line(f"grid lr={lr!r} val_nll={score!r}")
                logf.event(event="grid", lr=lr, val_nll=score)
            logf.line(f"grid chosen lr={chosen!r}")
            cfg = replace(cfg, lr=chosen, grid_search=False)
        ens = train_ensemble(train, cfg.ensemble_config(), jobs=args.jobs)
        logf.line(f"effective lr={cfg.lr!r} loss={cfg.loss} members={cfg.m_members} "
                  f"iterations={cfg.iterations} batch={cfg.batch_size}")
        if ens.batch_clamped:
            logf.line(f"batch size clamped to {len(train)}")
        for m, trace in enumerate(ens.traces):
            chunks = np.array_split(trace, min(20, len(trace)))
            means = [float(c.mean()) for c in chunks]
            logf.line(f"member {m} loss trace (20 windows): " + " ".join(f"{v:.5f}" for v in means))
            logf.event(event="member", member=m, seed=cfg.seed + m, trace=means,
                       final_loss=float(trace[-1]))
        nll, rmse = evaluate_model(ens, test)
        logf.line(f"held-out nll={nll!r} rmse={rmse!r}")
        logf.event(event="heldout", nll=nll, rmse=rmse)
    finally:
        logf.close()
    save_ensemble(ens, out / "ensemble.json")
    D.save_csv(test, out / "test.csv")
    save_config(cfg, out / "run_config.cfg")
    print(f"trained {cfg.m_members} members ({cfg.loss}, lr={cfg.lr:g}); "
          f"held-out NLL {nll:.4f} RMSE {rmse:.4f}; saved to {out}")
    return 0


def cmd_predict(args) -> int:
    ens = load_ensemble(args.ensemble)
    ds = _load_for(ens, args.input)
    mu, s2 = predictive(ens, ds.X)
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "mu", "sigma"])
            for i, (m, s) in enumerate(zip(mu, np.sqrt(s2))):
                w.writerow([i, repr(float(m)), repr(float(s))])
    except OSError as exc:
        raise CliError(f"cli: cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(mu)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args, RunConfig())
    out = _out_dir(cfg)
    ens = load_ensemble(args.ensemble)
    test = replace(_load_for(ens, args.test), split="test")
    kind = f"ensemble_{ens.config.loss}"
    dataset_id = args.dataset_id or Path(args.test).stem
    if cfg.n_runs >= 2:
        if not args.train:
            raise CliError("cli: --n-runs >= 2 retrains and needs --train")
        train = _load_for(ens, args.train)
        task = Task("fixed", ens.config, kind, data=train, test_data=test, dataset_id=dataset_id)
        report = run_repeated(task, cfg.n_runs, ens.config.base_seed, jobs=args.jobs)
    else:
        nll, rmse = evaluate_model(ens, test)
        report = MetricReport(dataset_id, kind, [{"run": 0, "seed": ens.config.base_seed,
                                                  "nll": nll, "rmse": rmse}])
    mu, s2 = predictive(ens, test.X)
    full = IntervalSeries(np.arange(len(test)), test.y, mu, np.sqrt(s2))
    doc = report.to_dict()
    doc["coverage"] = {"k1": coverage(full, 1.0), "k2": coverage(full, 2.0)}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n",
                                      encoding="utf-8")
    (out / "metrics_table.txt").write_text(render_table([report]), encoding="utf-8")
    emit_interval_series(ens, test, cfg.sample_size, cfg.seed).to_csv(out / "interval_series.csv")
    save_config(cfg, out / "run_config.cfg")
    print(render_table([report]), end="")
    return 0


def cmd_toy_bench(args) -> int:
    cfg = _resolve(args, RunConfig(iterations=TOY_BENCH_ITERATIONS, n_runs=5))
    out = _out_dir(cfg)
    result = toy_bench(cfg.ensemble_config(), seed=cfg.seed, n_runs=max(1, cfg.n_runs),
                       toy_n=cfg.toy_n, jobs=args.jobs)
    files = write_toy_bundle(result, out)
    save_config(cfg, out / "run_config.cfg")
    print((out / "table.txt").read_text(encoding="utf-8"), end="")
    for r in result.runs:
        e = r.extrapolation["ensemble"]
        print(f"seed {r.seed}: ensemble sigma on [4,6] {e['sigma_mean_x4_6']:.3f} "
              f"vs [-2,2] {e['sigma_mean_xm2_2']:.3f}")
    print(f"wrote {len(files)} files to {out}")
    return 0


def cmd_grad_check(args) -> int:
    results = random_grad_checks(args.n_nets, args.seed, args.hidden, args.batch,
                                 step=args.step, tol=args.tol, corrupt=args.corrupt)
    ok = True
    for net, loss, rep in results:
        ok &= rep.passed
        status = "pass" if rep.passed else "FAIL"
        print(f"net {net:2d} {loss:3s} max_rel_err={rep.max_rel_err:.3e} "
              f"worst={rep.worst[0]}{list(rep.worst[1])} {status}")
    print("grad-check " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


# --- parser ------------------------------------------------------------------

def _add_run_flags(p, data=True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--members", dest="m_members", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=("nll", "mse"))
    p.add_argument("--hidden", dest="hidden_dims", type=int, nargs="+")
    p.add_argument("--activation", choices=("relu", "tanh"))
    p.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
    if data:
        p.add_argument("--data", help="'toy', 'synthetic' or a CSV path")
        p.add_argument("--toy-n", type=int)
        p.add_argument("--duration", dest="drive_duration_s", type=float)
        p.add_argument("--train-frac", type=float)
        p.add_argument("--lagged-soc", action="store_true", help="add previous-row SOC as a feature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soc-ensemble", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a toy or synthetic drive CSV")
    p.add_argument("kind", choices=("toy", "drive"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--x-min", type=float, default=-3.0)
    p.add_argument("--x-max", type=float, default=3.0)
    p.add_argument("--duration", type=float, default=1800.0, help="seconds of driving")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and save an ensemble")
    _add_run_flags(p)
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--grid-iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict mu and sigma for every row of a CSV")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metric report and interval series for a test CSV")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", help="training CSV, needed when --n-runs >= 2")
    p.add_argument("--n-runs", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--dataset-id")
    p.add_argument("--config")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("toy-bench", help="toy experiment bundle: series, table, summary")
    _add_run_flags(p, data=False)
    p.add_argument("--n-runs", type=int)
    p.add_argument("--toy-n", type=int)
    p.set_defaults(func=cmd_toy_bench)

    p = sub.add_parser("grad-check", help="finite-difference check of backpropagation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-nets", type=int, default=20)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help="plant a gradient fault (must fail)")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, RuntimeError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
