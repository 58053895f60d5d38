"""Telemetry ingestion, scaling, chronological splitting and synthetic generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
import numpy as np

TELEMETRY_COLUMNS = (
    "t", "speed_mph", "battery_power_hp", "battery_current_a", "battery_voltage_v",
    "batt_temp1_c", "batt_temp2_c", "batt_temp3_c", "fan_pct", "soc_pct",
)
TOY_COLUMNS = ("x", "y", "y_true")

# OBD display names, used in error messages
COLUMN_LABELS = {
    "t": "Timestamp (s)",
    "speed_mph": "Vehicle speed (mph)",
    "battery_power_hp": "Hybrid/EV Battery Power (hp)",
    "battery_current_a": "Hybrid/EV Battery System Current (A)",
    "battery_voltage_v": "Hybrid/EV Battery System Voltage (V)",
    "batt_temp1_c": "Hybrid Battery Temperature 1",
    "batt_temp2_c": "Hybrid Battery Temperature 2",
    "batt_temp3_c": "Hybrid Battery Temperature 3",
    "fan_pct": "Hybrid Battery 1 Fan (%)",
    "soc_pct": "Hybrid Battery SOC (%)",
}

TELEMETRY_FEATURES = TELEMETRY_COLUMNS[1:-1]
PERCENT_COLUMNS = ("fan_pct", "soc_pct")

CAPACITY_AH = 6.5
MAX_VOLTAGE_V = 244.8
DT = 0.1
W_PER_HP = 745.7


class SchemaError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    speed_mph: float
    battery_power_hp: float
    battery_current_a: float
    battery_voltage_v: float
    batt_temp1_c: float
    batt_temp2_c: float
    batt_temp3_c: float
    fan_pct: float
    soc_pct: float


@dataclass(frozen=True)
class ToySample:
    x: float
    y: float
    y_true: float


@dataclass
class ValidationReport:
    n_rows: int = 0
    n_kept: int = 0
    rejected: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"n_rows": self.n_rows, "n_kept": self.n_kept,
                           "rejected": dict(sorted(self.rejected.items()))}, indent=2)


@dataclass
class Dataset:
    """Column-oriented dataset in chronological (row) order.

    ``columns`` holds every raw column; the model sees ``feature_names`` as
    inputs and ``target_name`` as the target. ``split`` records which part
    of a chronological split the rows came from.
    """

    columns: dict[str, np.ndarray]
    feature_names: tuple[str, ...]
    target_name: str
    provenance: str
    split: str = "full"
    report: ValidationReport | None = None

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1 or 0 in lengths:
            raise ValidationError("data: dataset must be nonempty with equal-length columns")
        missing = [c for c in (*self.feature_names, self.target_name) if c not in self.columns]
        if missing:
            raise SchemaError(f"data: dataset lacks column(s) {missing}")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values())))

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([self.columns[c] for c in self.feature_names])

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.target_name]

    def take(self, idx, split: str | None = None) -> Dataset:
        cols = {k: v[idx] for k, v in self.columns.items()}
        return replace(self, columns=cols, split=split or self.split, report=None)

    def record(self, i: int) -> TelemetryRecord | ToySample:
        if self.provenance == "toy":
            return ToySample(*(float(self.columns[c][i]) for c in TOY_COLUMNS))
        return TelemetryRecord(*(float(self.columns[c][i]) for c in TELEMETRY_COLUMNS))


def _fmt(v: float) -> str:
    return repr(float(v))


def save_csv(data: Dataset, path) -> None:
    """Write all columns; time with one decimal, everything else as exact repr."""
    names = TOY_COLUMNS if data.provenance == "toy" else TELEMETRY_COLUMNS
    names = [c for c in names if c in data.columns]
    names += [c for c in data.columns if c not in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        cols = [data.columns[c] for c in names]
        for i in range(len(data)):
            w.writerow([f"{cols[j][i]:.1f}" if n == "t" else _fmt(cols[j][i])
                        for j, n in enumerate(names)])


def detect_schema(path) -> str:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return "toy" if set(TOY_COLUMNS) <= set(header) else "telemetry"


def load_csv(path, schema: str = "telemetry", features=None) -> Dataset:
    """Parse and validate a telemetry or toy CSV.

    Rows with unparsable/non-finite values, or percent columns outside
    [0, 100], are dropped and counted in ``Dataset.report``.
    """
    required = TELEMETRY_COLUMNS if schema == "telemetry" else TOY_COLUMNS
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"data: {path} is empty")
        header = [h.strip() for h in header]
        for col in required:
            if col not in header:
                label = COLUMN_LABELS.get(col)
                raise SchemaError(f"data: missing column {col!r}" + (f" ({label})" if label else ""))
        pos = {c: header.index(c) for c in required}
        report = ValidationReport()
        rows: list[list[float]] = []
        for raw in reader:
            if not raw:
                continue
            report.n_rows += 1
            try:
                vals = [float(raw[pos[c]]) for c in required]
            except (ValueError, IndexError):
                report.rejected["unparsable"] = report.rejected.get("unparsable", 0) + 1
                continue
            if not all(math.isfinite(v) for v in vals):
                report.rejected["non_finite"] = report.rejected.get("non_finite", 0) + 1
                continue
            if schema == "telemetry" and any(
                    not 0.0 <= vals[required.index(c)] <= 100.0 for c in PERCENT_COLUMNS):
                report.rejected["range"] = report.rejected.get("range", 0) + 1
                continue
            rows.append(vals)
    report.n_kept = len(rows)
    if not rows:
        raise ValidationError(f"data: no valid rows in {path}")
    arr = np.array(rows, dtype=float)
    cols = {c: arr[:, j].copy() for j, c in enumerate(required)}
    if schema == "telemetry":
        t = cols["t"]
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            raise ValidationError(f"data: timestamps not strictly increasing at row {int(bad[0]) + 1}")
        feats = tuple(features or TELEMETRY_FEATURES)
        base = tuple(f for f in feats if f != "soc_lag1")
        ds = Dataset(cols, base, "soc_pct", "csv", report=report)
        return with_lagged_soc(ds) if "soc_lag1" in feats else ds
    return Dataset(cols, tuple(features or ("x",)), "y", "toy", report=report)


def with_lagged_soc(data: Dataset) -> Dataset:
    """Add the previous row's SOC as feature ``soc_lag1``, dropping the first row."""
    cols = {k: v[1:] for k, v in data.columns.items()}
    cols["soc_lag1"] = data.columns["soc_pct"][:-1].copy()
    feats = data.feature_names if "soc_lag1" in data.feature_names else (*data.feature_names, "soc_lag1")
    return replace(data, columns=cols, feature_names=tuple(feats), report=data.report)


def split_chrono(data: Dataset, train_frac: float = 0.8) -> tuple[Dataset, Dataset]:
    n = len(data)
    if n < 10:
        raise ValidationError(f"data: need at least 10 records to split, got {n}")
    k = int(math.floor(train_frac * n))
    if not 0 < k < n:
        raise ValidationError(f"data: split fraction {train_frac} leaves an empty side")
    return data.take(slice(0, k), "train"), data.take(slice(k, n), "test")


@dataclass(frozen=True)
class ScalerStats:
    feature_names: tuple[str, ...]
    x_mean: tuple[float, ...]
    x_std: tuple[float, ...]
    y_mean: float
    y_std: float
    fitted_on: str = "train"

    def apply_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - np.array(self.x_mean)) / np.array(self.x_std)

    def invert_x(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * np.array(self.x_std) + np.array(self.x_mean)

    def apply_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def invert_y(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_std + self.y_mean

    def invert_var(self, s2) -> np.ndarray:
        return np.asarray(s2, dtype=float) * self.y_std ** 2

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names), "x_mean": list(self.x_mean),
                "x_std": list(self.x_std), "y_mean": self.y_mean, "y_std": self.y_std,
                "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d: dict) -> ScalerStats:
        return cls(tuple(d["feature_names"]), tuple(d["x_mean"]), tuple(d["x_std"]),
                   float(d["y_mean"]), float(d["y_std"]), d.get("fitted_on", "train"))


def fit_scaler(train: Dataset) -> ScalerStats:
    """Population mean/std z-score stats. Refuses data tagged as a test split."""
    if train.split == "test":
        raise ValidationError("data: scaler must not be fitted on the test split")
    X, y = train.X, train.y
    x_std = X.std(axis=0)
    for name, s in zip(train.feature_names, x_std):
        if not s > 0:
            raise ValidationError(f"data: constant column {name!r} cannot be standardized")
    y_std = float(y.std())
    if not y_std > 0:
        raise ValidationError(f"data: constant column {train.target_name!r} cannot be standardized")
    return ScalerStats(tuple(train.feature_names), tuple(float(v) for v in X.mean(axis=0)),
                       tuple(float(v) for v in x_std), float(y.mean()), y_std,
                       train.split)


def make_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """``batch_size`` indices drawn uniformly with replacement from [0, n)."""
    if n < 1:
        raise ValueError("data: cannot batch an empty training set")
    return rng.integers(0, n, size=batch_size)


def toy_generate(n: int, x_min: float = -3.0, x_max: float = 3.0, seed: int = 0) -> Dataset:
    """y = 10 sin(x) + noise, noise std 3 for x <= 0 and 1 for x > 0."""
    if not x_min < x_max:
        raise ValueError("data: x_min must be < x_max")
    if n < 1:
        raise ValueError("data: n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(x_min, x_max, size=n)
    y_true = 10.0 * np.sin(x)
    std = np.where(x <= 0.0, 3.0, 1.0)
    y = y_true + std * rng.standard_normal(n)
    return Dataset({"x": x, "y": y, "y_true": y_true}, ("x",), "y", "toy")


def toy_eval_grid(x_min: float = -6.0, x_max: float = 6.0, step: float = 0.1) -> np.ndarray:
    if not step > 0:
        raise ValueError("data: grid step must be > 0")
    n = int(math.floor((x_max - x_min) / step + 1e-9)) + 1
    grid = x_min + step * np.arange(n)
    if not math.isclose(grid[-1], x_max, abs_tol=1e-9 * max(1.0, abs(x_max))):
        grid = np.append(grid, x_max)
    grid[-1] = x_max
    return grid


@dataclass(frozen=True)
class DriveProfile:
    """Knobs of the synthetic drive generator.

    ``current_a`` forces a constant battery current (positive = discharge),
    bypassing the speed/power model; used for integrator checks.
    """

    soc0: float = 60.0
    soc_target: float = 60.0
    soc_band: float = 5.0
    charge_kw: float = 8.0
    max_speed_mph: float = 70.0
    current_a: float | None = None
    power_limit_kw: float = 22.0
    r_internal: float = 0.15
    voltage_jitter: float = 0.1
    jitter_current_scale: float = 10.0
    ambient_c: float = 20.0


def ocv(soc):
    """Open-circuit voltage, monotone in SOC; stays ~20 V below the pack maximum."""
    s = np.clip(np.asarray(soc, dtype=float), 0.0, 100.0) / 100.0
    return 196.0 + 26.0 * s + 4.0 * (s - 0.5) ** 3


def internal_resistance(temp_c, r25: float):
    # rises in the cold; doubles roughly every 20 K below 25 C
    return r25 * np.exp(-(np.asarray(temp_c, dtype=float) - 25.0) / 29.0)


def _speed_trace(n: int, rng: np.random.Generator, vmax: float) -> np.ndarray:
    speed = np.zeros(n)
    v, i = 0.0, 0
    while i < n:
        kind = rng.choice(["accelerate", "cruise", "brake", "idle"], p=[0.3, 0.35, 0.2, 0.15])
        length = int(rng.integers(50, 400))
        if kind == "accelerate":
            target = rng.uniform(min(v, vmax), vmax)
            rate = rng.uniform(0.05, 0.35)
        elif kind == "brake":
            target = rng.uniform(0.0, v)
            rate = -rng.uniform(0.1, 0.5)
        elif kind == "idle":
            target, rate = 0.0, -0.6
        else:
            target, rate = v, 0.0
        for _ in range(length):
            if i >= n:
                break
            if rate > 0:
                v = min(target, v + rate)
            elif rate < 0:
                v = max(target, v + rate)
            v = max(0.0, v + 0.05 * rng.standard_normal()) if kind == "cruise" else v
            speed[i] = v
            i += 1
    return speed


def synthetic_drive_generate(duration_s: float, seed: int = 0,
                             profile: DriveProfile | None = None) -> Dataset:
    """Simulated hybrid drive at 0.1 s resolution.

    Speed follows random accelerate/cruise/brake/idle segments. Battery power
    is a noisy affine function of speed and acceleration (negative while
    braking) minus engine charging, which switches on below
    target-band and off above target+band; limited to +-``power_limit_kw``. Terminal voltage is an open-circuit curve in SOC
    minus a temperature-dependent IR drop plus jitter (larger at high
    current), capped at 244.8 V; current = power / voltage. Temperatures
    are slow mean-reverting walks heated by I^2, the fan is a saturating
    function of temperature, and SOC integrates -current against 6.5 Ah.
    """
    if duration_s < 60:
        raise ValueError("data: duration_s must be >= 60")
    p = profile or DriveProfile()
    rng = np.random.default_rng(seed)
    n = int(round(duration_s / DT))
    t = np.round(np.arange(n) * DT, 1)

    speed = _speed_trace(n, rng, p.max_speed_mph)
    accel = np.gradient(speed, DT)
    # traction/regen demand in kW: rolling + aero + inertia terms
    demand_kw = 0.06 * speed + 0.00004 * speed ** 3 + 6.0 * accel
    demand_kw = np.where(accel < -0.05, 5.0 * accel, demand_kw)
    demand_kw += 0.8 * rng.standard_normal(n)
    jitter = rng.standard_normal(n)
    temp_shocks = 0.01 * rng.standard_normal((n, 3))
    temp_offsets = np.array([0.0, 2.0, 4.0])
    keep = np.exp(-DT / 300.0)  # ~5 min thermal time constant

    soc = np.empty(n)
    current = np.empty(n)
    voltage = np.empty(n)
    power_w = np.empty(n)
    temps = np.empty((n, 3))
    s = p.soc0
    charging = s < p.soc_target
    # start thermally settled: heating state at the trip's expected I^2
    if p.current_a is None:
        lim = 1000.0 * p.power_limit_kw
        heat = float(np.mean((np.clip(1000.0 * demand_kw, -lim, lim) / ocv(p.soc0)) ** 2))
    else:
        heat = p.current_a ** 2
    temp = p.ambient_c + temp_offsets + 0.004 * heat
    for i in range(n):
        soc[i] = s
        temps[i] = temp
        v_oc = float(ocv(s))
        r = float(internal_resistance(temp.mean(), p.r_internal))
        if p.current_a is not None:
            cur = p.current_a
            volt = min(MAX_VOLTAGE_V, v_oc - cur * r)
            pw = cur * volt
        else:
            # hysteresis: the engine charges the pack from target-band up to target+band
            if s < p.soc_target - p.soc_band:
                charging = True
            elif s > p.soc_target + p.soc_band:
                charging = False
            pw = 1000.0 * (demand_kw[i] - (p.charge_kw if charging else 0.0))
            pw = max(-1000.0 * p.power_limit_kw, min(1000.0 * p.power_limit_kw, pw))
            cur0 = pw / v_oc
            noise = p.voltage_jitter * (1.0 + abs(cur0) / p.jitter_current_scale) * jitter[i]
            volt = min(MAX_VOLTAGE_V, v_oc - cur0 * r + noise)
            cur = pw / volt
        current[i], voltage[i], power_w[i] = cur, volt, pw
        s = min(100.0, max(0.0, s - cur * DT / 3600.0 / CAPACITY_AH * 100.0))
        heat = 0.999 * heat + 0.001 * cur * cur
        temp = keep * temp + (1.0 - keep) * (p.ambient_c + temp_offsets + 0.004 * heat) \
            + temp_shocks[i]

    # OBD reports whole degrees and whole percent; the fan controller sees the sensors
    temps = np.round(temps)
    mean_temp = temps.mean(axis=1)
    fan = np.round(100.0 / (1.0 + np.exp(-(mean_temp - (p.ambient_c + 8.0)) / 2.0)))

    cols = {
        "t": t, "speed_mph": speed, "battery_power_hp": power_w / W_PER_HP,
        "battery_current_a": current, "battery_voltage_v": voltage,
        "batt_temp1_c": temps[:, 0], "batt_temp2_c": temps[:, 1], "batt_temp3_c": temps[:, 2],
        "fan_pct": np.clip(fan, 0.0, 100.0), "soc_pct": soc,
    }
    return Dataset(cols, TELEMETRY_FEATURES, "soc_pct", "synthetic")
