import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soc_ensemble.data import (CAPACITY_AH, TELEMETRY_COLUMNS, DriveProfile, SchemaError,
                               ValidationError, fit_scaler, load_csv, make_batch, save_csv,
                               split_chrono, synthetic_drive_generate, toy_eval_grid,
                               toy_generate)


def write_rows(path, rows, columns=TELEMETRY_COLUMNS):
    lines = [",".join(columns)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def good_rows(n=10):
    return [[0.1 * i, 30.0, 5.0, 10.0, 210.0, 25.0, 26.0, 27.0, 40.0, 60.0 - 0.1 * i]
            for i in range(n)]


def test_load_clean_file(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, good_rows())
    ds = load_csv(p)
    assert len(ds) == 10 and ds.report.n_kept == 10 and ds.report.rejected == {}
    assert ds.X.shape == (10, 8)
    assert ds.record(3).soc_pct == pytest.approx(59.7)


def test_missing_soc_column_is_named(tmp_path):
    p = tmp_path / "d.csv"
    cols = [c for c in TELEMETRY_COLUMNS if c != "soc_pct"]
    write_rows(p, [r[:-1] for r in good_rows()], cols)
    with pytest.raises(SchemaError, match="Hybrid Battery SOC"):
        load_csv(p)


def test_out_of_range_soc_rejected(tmp_path):
    rows = good_rows()
    rows[4][-1] = 120.0
    rows[6][3] = "nan"
    rows[7][2] = "abc"
    p = tmp_path / "d.csv"
    write_rows(p, rows)
    ds = load_csv(p)
    assert len(ds) == 7
    assert ds.report.rejected == {"range": 1, "non_finite": 1, "unparsable": 1}


def test_nonmonotone_time_rejected(tmp_path):
    rows = good_rows()
    rows[5][0] = rows[4][0]
    p = tmp_path / "d.csv"
    write_rows(p, rows)
    with pytest.raises(ValidationError, match="row 5"):
        load_csv(p)


def test_lagged_soc_feature(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, good_rows())
    ds = load_csv(p, features=(*TELEMETRY_COLUMNS[1:-1], "soc_lag1"))
    assert len(ds) == 9 and ds.feature_names[-1] == "soc_lag1"
    assert np.allclose(ds.columns["soc_lag1"] - ds.y, 0.1)


def test_csv_round_trip_is_exact(tmp_path):
    ds = synthetic_drive_generate(60, seed=2)
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p)
    for c in TELEMETRY_COLUMNS:
        assert np.array_equal(back.columns[c], ds.columns[c]), c


@pytest.mark.parametrize("n,ntr", [(1000, 800), (10, 8), (11, 8)])
def test_split_sizes(n, ntr):
    ds = toy_generate(n, seed=0)
    tr, te = split_chrono(ds)
    assert (len(tr), len(te)) == (ntr, n - ntr)
    assert np.array_equal(np.concatenate([tr.y, te.y]), ds.y)
    assert (tr.split, te.split) == ("train", "test")


def test_split_needs_ten_rows():
    with pytest.raises(ValidationError):
        split_chrono(toy_generate(9))


def test_scaler_hand_values():
    ds = toy_generate(3)
    ds.columns["x"] = np.array([1.0, 2.0, 3.0])
    sc = fit_scaler(ds)
    assert sc.x_mean == (2.0,)
    assert sc.x_std[0] == pytest.approx(0.8165, abs=1e-4)


def test_scaler_refuses_test_split_and_constant_column():
    tr, te = split_chrono(toy_generate(50))
    with pytest.raises(ValidationError):
        fit_scaler(te)
    tr.columns["x"][:] = 1.0
    with pytest.raises(ValidationError, match="'x'"):
        fit_scaler(tr)


def test_scaler_applies_outside_train_range():
    tr, te = split_chrono(synthetic_drive_generate(120, seed=1))
    sc = fit_scaler(tr)
    assert np.all(np.isfinite(sc.apply_x(te.X * 10)))


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_scaler_round_trip(seed, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(3, 7, (20, d))
    ds = toy_generate(20, seed=seed)
    ds.columns.update({f"f{j}": X[:, j] for j in range(d)})
    ds.feature_names = tuple(f"f{j}" for j in range(d))
    sc = fit_scaler(ds)
    assert np.allclose(sc.invert_x(sc.apply_x(X)), X, atol=1e-10)
    assert np.allclose(sc.invert_y(sc.apply_y(ds.y)), ds.y, atol=1e-10)


def test_batches_in_range_and_reproducible():
    a = make_batch(800, 100, np.random.default_rng(1))
    b = make_batch(800, 100, np.random.default_rng(1))
    assert a.shape == (100,) and a.min() >= 0 and a.max() < 800
    assert np.array_equal(a, b)


def test_batch_indices_uniform():
    n, draws = 20, 100_000
    counts = np.bincount(make_batch(n, draws, np.random.default_rng(0)), minlength=n)
    expected = draws / n
    se = np.sqrt(expected * (1 - 1 / n))
    assert np.all(np.abs(counts - expected) < 4 * se)
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 43.8  # 99.9% quantile, 19 dof


def test_toy_function_and_noise():
    ds = toy_generate(100_000, seed=11)
    x, r = ds.columns["x"], ds.y - ds.columns["y_true"]
    assert x.min() >= -3 and x.max() <= 3
    assert np.allclose(ds.columns["y_true"], 10 * np.sin(x))
    assert abs(r[x <= 0].std() - 3.0) < 0.05
    assert abs(r[x > 0].std() - 1.0) < 0.02


def test_toy_sin_peak():
    ds = toy_generate(1, x_min=np.pi / 2, x_max=np.pi / 2 + 1e-12)
    assert ds.columns["y_true"][0] == pytest.approx(10.0)


def test_eval_grid():
    assert len(toy_eval_grid(-6, 6, 1)) == 13
    g = toy_eval_grid(-6, 6, 0.1)
    assert len(g) == 121 and g[0] == -6 and g[-1] == 6
    g = toy_eval_grid(0, 1, 0.3)
    assert g[0] == 0 and g[-1] == 1


def test_drive_length_and_timestamps():
    ds = synthetic_drive_generate(60, seed=0)
    assert len(ds) == 600
    assert np.allclose(ds.columns["t"], 0.1 * np.arange(600))


def test_drive_is_deterministic_and_valid():
    a = synthetic_drive_generate(300, seed=4)
    b = synthetic_drive_generate(300, seed=4)
    assert all(np.array_equal(a.columns[c], b.columns[c]) for c in TELEMETRY_COLUMNS)
    for c in ("fan_pct", "soc_pct"):
        assert a.columns[c].min() >= 0 and a.columns[c].max() <= 100
    assert a.columns["battery_voltage_v"].max() <= 244.8


def test_zero_current_keeps_soc():
    ds = synthetic_drive_generate(60, profile=DriveProfile(current_a=0.0))
    assert np.all(ds.y == ds.y[0])


def test_constant_discharge_integrates_capacity():
    ds = synthetic_drive_generate(117.1, profile=DriveProfile(soc0=100.0, current_a=10.0))
    drop = ds.y[0] - ds.y[-1]
    want = 10.0 * (len(ds) - 1) * 0.1 / 3600 / CAPACITY_AH * 100
    assert drop == pytest.approx(want, rel=1e-9)
    assert drop == pytest.approx(5.0, abs=0.01)


def test_drive_rejects_short_duration():
    with pytest.raises(ValueError):
        synthetic_drive_generate(30)
