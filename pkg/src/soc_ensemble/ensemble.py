"""Independent training of ensemble members and their uniform-mixture combination."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset, ScalerStats, fit_scaler, make_batch
from .nn_core import (GaussianPrediction, LayerSpec, NetworkParams, backward, forward,
                      init_params)
from .optimizer import AdamState, adam_step

log = logging.getLogger(__name__)

FORMAT_NAME = "soc-ensemble"
FORMAT_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, member: int, iteration: int, detail: str = ""):
        self.member, self.iteration = member, iteration
        super().__init__(f"ensemble: member {member} diverged at iteration {iteration}"
                         + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class EnsembleConfig:
    m_members: int = 5
    batch_size: int = 100
    iterations: int = 20000
    lr: float = 0.1
    loss: str = "nll"
    base_seed: int = 0
    layer_spec: LayerSpec = field(default_factory=LayerSpec)

    def __post_init__(self):
        if self.m_members < 1:
            raise ValueError("ensemble: m_members must be >= 1")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("ensemble: batch_size and iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("ensemble: lr must be > 0")
        if self.loss not in ("nll", "mse"):
            raise ValueError(f"ensemble: unknown loss {self.loss!r}")
        want = "gaussian" if self.loss == "nll" else "mean_only"
        if self.layer_spec.head != want:
            object.__setattr__(self, "layer_spec", replace(self.layer_spec, head=want))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_spec"]["hidden_dims"] = list(self.layer_spec.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleConfig:
        d = dict(d)
        d["layer_spec"] = LayerSpec(**d["layer_spec"])
        return cls(**d)


@dataclass
class MixturePrediction:
    mu_star: np.ndarray
    sigma2_star: np.ndarray
    member_mus: np.ndarray
    member_sigma2s: np.ndarray


@dataclass
class Ensemble:
    members: list[NetworkParams]
    config: EnsembleConfig
    scaler: ScalerStats
    # constant predictive variance (raw units) for mean-only ensembles
    residual_var: float | None = None
    traces: list[np.ndarray] = field(default_factory=list, repr=False, compare=False)
    batch_clamped: bool = False

    def subset(self, idx) -> Ensemble:
        """Ensemble of the selected members only (used for single-network baselines)."""
        idx = [idx] if isinstance(idx, int) else list(idx)
        # residual_var is left unset: it belongs to the full mixture mean
        return Ensemble([self.members[i] for i in idx], replace(self.config, m_members=len(idx)),
                        self.scaler)


def mixture_moments(mus, sigma2s) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a uniform mixture of Gaussians over axis 0.

    The variance is the mean of component variances plus the spread of the
    component means, which equals mean(sigma2 + mu^2) - mu_star^2 without
    the cancellation.
    """
    mus = np.asarray(mus, dtype=float)
    sigma2s = np.asarray(sigma2s, dtype=float)
    mu_star = mus.mean(axis=0)
    spread = ((mus - mu_star) ** 2).mean(axis=0)
    return mu_star, sigma2s.mean(axis=0) + spread


def _batch_stream(seed: int) -> np.random.Generator:
    # kept apart from the init stream so changing the init scheme leaves batches alone
    return np.random.default_rng([seed, 1])


def train_member(X: np.ndarray, y: np.ndarray, config: EnsembleConfig,
                 member_index: int) -> tuple[NetworkParams, np.ndarray]:
    """Train one member on standardized (X, y); returns (params, per-iteration loss)."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("ensemble: empty training set")
    if not 0 <= member_index < config.m_members:
        raise ValueError(f"ensemble: member_index {member_index} out of range")
    seed = config.base_seed + member_index
    spec = replace(config.layer_spec, input_dim=X.shape[1])
    net = init_params(spec, seed)
    state = AdamState.fresh(net, lr=config.lr)
    rng = _batch_stream(seed)
    bs = min(config.batch_size, n)
    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        idx = make_batch(n, bs, rng)
        value, grads = backward(net, X[idx], y[idx], config.loss)
        if not np.isfinite(value):
            raise DivergenceError(member_index, it, "non-finite loss")
        trace[it] = value
        try:
            net, state = adam_step(state, net, grads)
        except FloatingPointError as exc:
            raise DivergenceError(member_index, it, str(exc)) from None
    return net, trace


def _train_one(args):
    X, y, config, i = args
    try:
        return train_member(X, y, config, i)
    except DivergenceError as exc:
        return exc


def train_ensemble(data: Dataset, config: EnsembleConfig, jobs: int = 1) -> Ensemble:
    """Fit the scaler on ``data`` and train ``config.m_members`` members.

    ``jobs > 1`` trains members in worker processes; every member has its
    own seed and stream, so the result does not depend on ``jobs``.
    """
    scaler = fit_scaler(data)
    X = scaler.apply_x(data.X)
    y = scaler.apply_y(data.y)
    clamped = config.batch_size > len(data)
    if clamped:
        log.warning("batch size %d exceeds %d training rows; clamped", config.batch_size, len(data))
    tasks = [(X, y, config, i) for i in range(config.m_members)]
    if jobs > 1 and config.m_members > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.m_members)) as pool:
            results = list(pool.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    failed = [r for r in results if isinstance(r, DivergenceError)]
    if failed:
        raise DivergenceError(failed[0].member, failed[0].iteration,
                              f"diverged members: {[f.member for f in failed]}")
    members = [r[0] for r in results]
    ens = Ensemble(members, config, scaler, traces=[r[1] for r in results], batch_clamped=clamped)
    if config.loss == "mse":
        set_residual_var(ens, data)
    return ens


def set_residual_var(ens: Ensemble, train: Dataset) -> Ensemble:
    """Constant predictive variance for mean-only ensembles: variance of training residuals."""
    ens.residual_var = float(np.var(train.y - predict_mean(ens, train.X)))
    return ens


def _member_outputs(ens: Ensemble, X) -> tuple[np.ndarray, np.ndarray | None]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, len(ens.scaler.feature_names))
    Z = ens.scaler.apply_x(X)
    preds = [forward(net, Z) for net in ens.members]
    mus = np.stack([ens.scaler.invert_y(p.mu) for p in preds])
    if preds[0].sigma2 is None:
        return mus, None
    return mus, np.stack([ens.scaler.invert_var(p.sigma2) for p in preds])


def predict_mixture(ens: Ensemble, X) -> MixturePrediction:
    """Mixture mean/variance in raw units for each row of X."""
    mus, s2 = _member_outputs(ens, X)
    if s2 is None:
        raise ValueError("ensemble: mixture variance undefined for mean_only members")
    mu_star, s2_star = mixture_moments(mus, s2)
    return MixturePrediction(mu_star, s2_star, mus, s2)


def predict_mean(ens: Ensemble, X) -> np.ndarray:
    mus, _ = _member_outputs(ens, X)
    return mus.mean(axis=0)


def predictive(ens: Ensemble, X) -> tuple[np.ndarray, np.ndarray]:
    """(mu, sigma2) for any ensemble; mean-only ensembles use their constant residual variance."""
    if ens.config.loss == "nll":
        p = predict_mixture(ens, X)
        return p.mu_star, p.sigma2_star
    if ens.residual_var is None:
        raise ValueError("ensemble: mse ensemble has no residual variance")
    mu = predict_mean(ens, X)
    return mu, np.full_like(mu, ens.residual_var)


def predict_single(net: NetworkParams, scaler: ScalerStats, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, len(scaler.feature_names))
    p = forward(net, scaler.apply_x(X))
    s2 = None if p.sigma2 is None else scaler.invert_var(p.sigma2)
    return GaussianPrediction(scaler.invert_y(p.mu), s2)


def to_dict(ens: Ensemble) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": ens.config.to_dict(),
        "scaler": ens.scaler.to_dict(),
        "residual_var": ens.residual_var,
        "members": [
            {"seed": net.seed,
             "input_dim": net.spec.input_dim,
             "weights": [w.tolist() for w in net.weights],
             "biases": [b.tolist() for b in net.biases]}
            for net in ens.members
        ],
    }


def from_dict(d: dict) -> Ensemble:
    if d.get("format") != FORMAT_NAME:
        raise ValueError("ensemble: not an ensemble file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"ensemble: unsupported format version {d.get('version')}")
    config = EnsembleConfig.from_dict(d["config"])
    members = []
    for m in d["members"]:
        spec = replace(config.layer_spec, input_dim=m["input_dim"])
        members.append(NetworkParams(spec, [np.array(w, dtype=float) for w in m["weights"]],
                                     [np.array(b, dtype=float) for b in m["biases"]], m["seed"]))
    return Ensemble(members, config, ScalerStats.from_dict(d["scaler"]), d["residual_var"])


def save_ensemble(ens: Ensemble, path) -> None:
    # json writes floats with repr, which round-trips doubles exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(ens), fh, indent=1)
        fh.write("\n")


def load_ensemble(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
