import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from soc_ensemble.data import split_chrono, toy_generate
from soc_ensemble import evaluation
from soc_ensemble.ensemble import DivergenceError, predictive, train_ensemble
from soc_ensemble.evaluation import (MODEL_KINDS, IntervalSeries, MetricReport, Task,
                                     compare_models, coverage, emit_interval_series,
                                     grid_series, nll_metric, render_table, rmse_metric,
                                     run_repeated, toy_extrapolation_summary, tune_lr)
from soc_ensemble.nn_core import mse_loss


def test_rmse_hand_values():
    assert rmse_metric([1, 2], [1, 2]) == 0
    assert rmse_metric([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(0, 10))
def test_rmse_homogeneous_and_matches_mse(res, c):
    r = np.array(res)
    assert rmse_metric(c * r, np.zeros_like(r)) == pytest.approx(c * rmse_metric(r, 0 * r), abs=1e-9)
    assert rmse_metric(r, 0 * r) ** 2 * r.size == pytest.approx(mse_loss(r, 0 * r), rel=1e-12, abs=1e-12)


def test_nll_metric_hand_values():
    assert nll_metric([1.0, 2.0], [1.0, 1.0], [1.0, 2.0]) == pytest.approx(0.918939, abs=1e-6)
    assert nll_metric([0.0], [1.0], [2.0]) == pytest.approx(2.918939, abs=1e-6)
    assert nll_metric([0.0, 0.0], [1.0, 1.0], [0.0, 2.0]) == pytest.approx(1.918939, abs=1e-6)


def test_coverage_cases():
    y = np.arange(5.0)
    exact = IntervalSeries(np.arange(5), y, y, np.ones(5))
    assert coverage(exact, 0.5) == 1.0
    rng = np.random.default_rng(0)
    r = rng.standard_normal(200_000)
    s = IntervalSeries(np.arange(r.size), r, np.zeros_like(r), np.ones_like(r))
    assert coverage(s, 1.0) == pytest.approx(0.6827, abs=0.02)
    assert coverage(s, 0.0) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.floats(0, 5), st.floats(0, 5))
def test_coverage_monotone(res, k1, k2):
    r = np.array(res)
    s = IntervalSeries(np.arange(r.size), r, np.zeros_like(r), np.ones_like(r))
    lo, hi = sorted((k1, k2))
    assert coverage(s, lo) <= coverage(s, hi)


def test_report_aggregate_hand_values():
    rep = MetricReport("d", "ensemble_nll", [{"run": i, "seed": i, "nll": v, "rmse": v}
                                             for i, v in enumerate([1.0, 2.0, 3.0])])
    agg = rep.aggregate()
    assert agg["nll"]["mean"] == 2.0
    assert agg["nll"]["std"] == pytest.approx(0.8165, abs=1e-4)
    assert rep.cell("nll") == "2.00 ± 0.82"
    assert rep.check(json.loads(rep.to_json())["aggregate"])
    back = MetricReport.from_dict(json.loads(rep.to_json()))
    assert back.aggregate() == agg


def test_report_order_independent():
    runs = [{"run": i, "seed": i, "nll": float(i) ** 0.5, "rmse": 1.0 / (i + 1)} for i in range(7)]
    a = MetricReport("d", "k", runs).aggregate()
    b = MetricReport("d", "k", runs[::-1]).aggregate()
    assert a == b


def test_table_layout():
    rep = MetricReport("toy", "ensemble_nll", [{"run": 0, "seed": 0, "nll": 1.0, "rmse": 2.0},
                                               {"run": 1, "seed": 1, "nll": 3.0, "rmse": 2.0}])
    text = render_table([rep])
    assert "2.00 ± 1.00" in text and "2.00 ± 0.00" in text


def test_interval_series_clamp_order_consistency(tmp_path, fast_config):
    ds = toy_generate(250, seed=1)
    tr, te = split_chrono(ds)
    ens = train_ensemble(tr, fast_config)
    s = emit_interval_series(ens, te, sample_size=100, seed=0)
    assert len(s) == 50
    assert np.all(np.diff(s.index) > 0)
    mu, s2 = predictive(ens, te.X[s.index])
    assert np.allclose(s.mu, mu, atol=1e-12, rtol=0) and np.allclose(s.sigma, np.sqrt(s2))
    p = tmp_path / "s.csv"
    s.to_csv(p)
    assert p.read_text().splitlines()[0] == "index,y_true,mu,sigma"


def test_run_repeated_deterministic(fast_config):
    task = Task("toy", replace(fast_config, iterations=50), toy_n=100)
    a = run_repeated(task, 3, base_seed=5)
    b = run_repeated(task, 3, base_seed=5, jobs=2)
    assert a.to_dict() == b.to_dict()
    assert [r["seed"] for r in a.runs] == [5, 1005, 2005]


def test_run_repeated_excludes_failed_runs(fast_config, monkeypatch, caplog):
    real = evaluation.train_ensemble

    def flaky(train, config, jobs=1):
        if config.base_seed == 1000:
            raise DivergenceError(0, 17, "planted")
        return real(train, config, jobs)

    monkeypatch.setattr(evaluation, "train_ensemble", flaky)
    rep = run_repeated(Task("toy", replace(fast_config, iterations=20), toy_n=60), 3)
    assert [r["run"] for r in rep.runs] == [0, 2]
    assert rep.failed[0]["run"] == 1 and "planted" in rep.failed[0]["error"]
    assert "failed" in caplog.text
    assert rep.to_dict()["n_failed"] == 1


def test_run_repeated_all_failed(fast_config, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError(0, 1)
    monkeypatch.setattr(evaluation, "train_ensemble", boom)
    with pytest.raises(RuntimeError):
        run_repeated(Task("toy", fast_config, toy_n=60), 2)


def test_run_repeated_needs_two_runs(fast_config):
    with pytest.raises(ValueError):
        run_repeated(Task("toy", fast_config), 1)


def test_identical_seeds_give_zero_std(fast_config, monkeypatch):
    monkeypatch.setattr(evaluation, "RUN_STRIDE", 0)
    tr, te = split_chrono(toy_generate(120, seed=2))
    task = Task("fixed", replace(fast_config, iterations=30), data=tr, test_data=te)
    agg = run_repeated(task, 2).aggregate()
    assert agg["nll"]["std"] == 0.0 and agg["rmse"]["std"] == 0.0


def test_compare_models_table(fast_config):
    tr = toy_generate(200, seed=1)
    te = toy_generate(200, seed=2)
    t1, models = compare_models(tr, te, fast_config)
    t2, _ = compare_models(tr, te, fast_config)
    assert set(t1) == set(MODEL_KINDS) and t1 == t2
    assert all(np.isfinite(v).all() for v in t1.values())
    summ = toy_extrapolation_summary(models["ensemble_nll"], models["single_nll"])
    assert set(summ) == {"ensemble", "single"}
    assert "sigma_mean_x4_6" in summ["ensemble"] and "sigma_mean_xm2_2" in summ["single"]
    g = grid_series(models["ensemble_nll"], [-1.0, 0.0, 1.0])
    assert np.allclose(g.y_true, 10 * np.sin([-1.0, 0.0, 1.0]))


def test_tune_lr_reports_all_candidates(fast_config):
    tr, _ = split_chrono(toy_generate(200, seed=0))
    lr, scores = tune_lr(tr, replace(fast_config, m_members=1), iterations=30)
    assert len(scores) == 5 and lr in scores
    finite = {k: v for k, v in scores.items() if np.isfinite(v)}
    assert scores[lr] == min(finite.values())
