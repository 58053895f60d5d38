"""Dense networks with a Gaussian output head, the two training losses and
exact backpropagation, plus a central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_VAR = 1e-6
NLL_CONST = 0.5 * np.log(2.0 * np.pi)

ACTIVATIONS = ("relu", "tanh")
HEADS = ("gaussian", "mean_only")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int = 1
    hidden_dims: tuple[int, ...] = (50,)
    activation: str = "relu"
    head: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise SpecError(f"nn_core: input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise SpecError(f"nn_core: hidden dims must be >= 1, got {list(self.hidden_dims)}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"nn_core: unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise SpecError(f"nn_core: unknown head {self.head!r}")

    @property
    def output_dim(self) -> int:
        return 2 if self.head == "gaussian" else 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        sizes = self.layer_sizes
        return [((a, b), (b,)) for a, b in zip(sizes[:-1], sizes[1:])]


@dataclass
class NetworkParams:
    """Weights are stored as (fan_in, fan_out) matrices, one per layer."""

    spec: LayerSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def copy(self) -> NetworkParams:
        return NetworkParams(self.spec, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.seed)

    def arrays(self) -> list[np.ndarray]:
        """Flat view order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class GaussianPrediction:
    """Predicted mean and variance; ``sigma2`` is None for mean-only heads."""

    mu: np.ndarray
    sigma2: np.ndarray | None = None


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst: tuple[str, tuple[int, ...]] = field(default=("", ()))
    n_checked: int = 0


def audit_shapes(net: NetworkParams) -> None:
    """Raise if any weight/bias shape disagrees with the layer spec, or if a value is non-finite."""
    expected = net.spec.shapes()
    if len(net.weights) != len(expected) or len(net.biases) != len(expected):
        raise SpecError(f"nn_core: expected {len(expected)} layers, "
                        f"got {len(net.weights)} weights / {len(net.biases)} biases")
    for i, ((ws, bs), w, b) in enumerate(zip(expected, net.weights, net.biases)):
        if w.shape != ws or b.shape != bs:
            raise SpecError(f"nn_core: layer {i} shapes {w.shape}/{b.shape}, expected {ws}/{bs}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise SpecError(f"nn_core: layer {i} has non-finite parameters")


def softplus(t):
    t = np.asarray(t, dtype=float)
    return np.logaddexp(0.0, t)


def softplus_inv(s: float) -> float:
    return float(s + np.log(-np.expm1(-s)))


def variance_transform(raw):
    """softplus(raw) + 1e-6: strictly positive, monotone, overflow-free."""
    return softplus(raw) + EPS_VAR


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def init_params(spec: LayerSpec, seed: int) -> NetworkParams:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for (fan_in, fan_out), _ in spec.shapes():
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if spec.head == "gaussian":
        # initial sigma2 ~ 1 in standardized units
        biases[-1][1] = softplus_inv(1.0 - EPS_VAR)
    return NetworkParams(spec, weights, biases, seed)


def _act(spec: LayerSpec, z):
    return np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)


def _act_grad(spec: LayerSpec, z, a):
    return (z > 0.0).astype(float) if spec.activation == "relu" else 1.0 - a * a


def _as_batch(net: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == net.spec.input_dim else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise SpecError(f"nn_core: input has shape {x.shape}, expected (*, {net.spec.input_dim})")
    if not np.all(np.isfinite(x)):
        raise ValueError("nn_core: non-finite input")
    return x


def _forward_cache(net: NetworkParams, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        zs.append(z)
        a = z if i == last else _act(net.spec, z)
        acts.append(a)
    return zs, acts


def forward(net: NetworkParams, x) -> GaussianPrediction:
    """Evaluate the network on one feature vector or an (n, d) batch.

    Returns arrays of shape (n,). A single 1-D vector of length ``input_dim``
    is treated as a batch of one.
    """
    x = _as_batch(net, x)
    _, acts = _forward_cache(net, x)
    out = acts[-1]
    if net.spec.head == "gaussian":
        return GaussianPrediction(out[:, 0].copy(), variance_transform(out[:, 1]))
    return GaussianPrediction(out[:, 0].copy(), None)


def nll_loss(pred: GaussianPrediction, y) -> float:
    """Mean Gaussian negative log-likelihood, constant 0.5*log(2*pi) included."""
    if pred.sigma2 is None:
        raise ValueError("nn_core: nll_loss needs a variance (mean_only head given)")
    mu = np.atleast_1d(np.asarray(pred.mu, dtype=float))
    s2 = np.atleast_1d(np.asarray(pred.sigma2, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(s2 > 0)):
        raise ValueError("nn_core: sigma2 must be > 0")
    r = y - mu
    return float(np.mean(0.5 * np.log(s2) + r * r / (2.0 * s2) + NLL_CONST))


def mse_loss(mus, ys) -> float:
    """Sum of squared residuals (not averaged)."""
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if mus.shape != ys.shape:
        raise ValueError(f"nn_core: length mismatch {mus.shape} vs {ys.shape}")
    if mus.size == 0:
        raise ValueError("nn_core: mse_loss on empty input")
    r = ys - mus
    return float(np.sum(r * r))


def backward(net: NetworkParams, x, y, loss: str) -> tuple[float, GradientSet]:
    """Mean batch loss and its exact gradient with respect to every parameter."""
    if loss not in ("nll", "mse"):
        raise ValueError(f"nn_core: unknown loss {loss!r}")
    if loss == "nll" and net.spec.head != "gaussian":
        raise ValueError("nn_core: nll loss requires a gaussian head")
    x = _as_batch(net, x)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("nn_core: empty batch")
    if y.shape != (n,):
        raise ValueError(f"nn_core: targets shape {y.shape}, expected ({n},)")

    zs, acts = _forward_cache(net, x)
    out = acts[-1]
    mu = out[:, 0]
    r = y - mu
    d_out = np.zeros_like(out)
    if loss == "nll":
        raw = out[:, 1]
        s2 = variance_transform(raw)
        value = float(np.mean(0.5 * np.log(s2) + r * r / (2.0 * s2) + NLL_CONST))
        d_out[:, 0] = -r / s2 / n
        d_s2 = 0.5 / s2 - r * r / (2.0 * s2 * s2)
        d_out[:, 1] = d_s2 * _sigmoid(raw) / n
    else:
        value = float(np.sum(r * r)) / n
        d_out[:, 0] = -2.0 * r / n

    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = d_out
    for i in range(n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * _act_grad(net.spec, zs[i - 1], acts[i])
    return value, GradientSet(gw, gb)


def batch_loss(net: NetworkParams, x, y, loss: str) -> float:
    """Mean batch loss by plain forward evaluation (no gradients)."""
    pred = forward(net, x)
    if loss == "nll":
        return nll_loss(pred, y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return mse_loss(pred.mu, y) / y.size


def grad_check(net: NetworkParams, x, y, loss: str, step: float = 1e-5,
               tol: float = 1e-4, corrupt: bool = False) -> GradCheckReport:
    """Compare ``backward`` against central finite differences on every parameter.

    Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor keeps
    roundoff on near-zero partials from counting as a failure.
    With ``corrupt=True`` the largest analytic entry is doubled first, which
    the check must catch.
    """
    if not 0.0 < step <= 1e-2:
        raise ValueError(f"nn_core: step must be in (0, 1e-2], got {step}")
    _, grads = backward(net, x, y, loss)
    names = [f"{kind}{i}" for i in range(len(net.weights)) for kind in ("W", "b")]
    analytic = [g.copy() for g in grads.arrays()]
    if corrupt:
        k = int(np.argmax([np.max(np.abs(g)) for g in analytic]))
        idx = np.unravel_index(np.argmax(np.abs(analytic[k])), analytic[k].shape)
        analytic[k][idx] *= 2.0

    probe = net.copy()
    worst, worst_at, count = 0.0, ("", ()), 0
    for name, arr, ga in zip(names, probe.arrays(), analytic):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = batch_loss(probe, x, y, loss)
            arr[idx] = orig - step
            down = batch_loss(probe, x, y, loss)
            arr[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = ga[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            count += 1
            if rel > worst:
                worst, worst_at = rel, (name, tuple(int(i) for i in idx))
    return GradCheckReport(float(worst), bool(worst <= tol), worst_at, count)


def random_grad_checks(n_nets: int = 20, seed: int = 0, hidden: int = 50, batch: int = 8,
                       losses=("nll", "mse"), head: str = "gaussian", step: float = 1e-5,
                       tol: float = 1e-4, corrupt: bool = False) -> list[tuple[int, str, GradCheckReport]]:
    """Grad-check freshly initialized 1-input nets on random batches.

    Biases get a small random offset so ReLU kinks are not all at zero.
    """
    rng = np.random.default_rng(seed)
    spec = LayerSpec(1, (hidden,), "relu", head)
    out = []
    for i in range(n_nets):
        net = init_params(spec, seed + i)
        for b in net.biases:
            b += 0.1 * rng.standard_normal(b.shape)
        x = rng.standard_normal((batch, 1))
        y = rng.standard_normal(batch)
        for loss in losses:
            out.append((i, loss, grad_check(net, x, y, loss, step, tol, corrupt)))
    return out
