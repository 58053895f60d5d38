"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .ensemble import EnsembleConfig
from .nn_core import LayerSpec

OUTPUT_DIR_ENV = "SOC_ENSEMBLE_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # ensemble / network
    m_members: int = 5
    batch_size: int = 100
    iterations: int = 20000
    lr: float = 0.1
    loss: str = "nll"
    hidden_dims: tuple[int, ...] = (50,)
    activation: str = "relu"
    seed: int = 0
    # data
    data: str = "toy"  # "toy", "synthetic" or a CSV path
    toy_n: int = 1000
    drive_duration_s: float = 1800.0
    train_frac: float = 0.8
    include_lagged_soc: bool = False
    # tuning / evaluation
    grid_search: bool = False
    grid_iterations: int = 2000
    n_runs: int = 1
    sample_size: int = 100
    output_dir: str = ""

    def ensemble_config(self, input_dim: int = 1) -> EnsembleConfig:
        spec = LayerSpec(input_dim, self.hidden_dims, self.activation,
                         "gaussian" if self.loss == "nll" else "mean_only")
        return EnsembleConfig(self.m_members, self.batch_size, self.iterations, self.lr,
                              self.loss, self.seed, spec)

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_DIR_ENV, "runs"))


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse(name: str, text: str):
    default = getattr(RunConfig, name)
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"config: bad value for {name!r}: {text!r}") from None
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config: cannot parse: {exc}") from None
    values = {}
    for key, raw in parser["run"].items():
        if key not in _FIELDS:
            raise ConfigError(f"config: unknown key {key!r}")
        values[key] = _parse(key, raw)
    return replace(base or RunConfig(), **values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")
