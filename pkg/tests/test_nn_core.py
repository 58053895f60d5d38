import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from soc_ensemble.nn_core import (EPS_VAR, GaussianPrediction, LayerSpec, NetworkParams, SpecError,
                                  audit_shapes, backward, forward, grad_check, init_params,
                                  mse_loss, nll_loss, random_grad_checks, variance_transform)


def zero_net(spec):
    net = init_params(spec, 0)
    for a in net.arrays():
        a[...] = 0.0
    return net


def test_init_is_deterministic_per_seed():
    spec = LayerSpec(1, (50,))
    a, b, c = init_params(spec, 7), init_params(spec, 7), init_params(spec, 8)
    assert all(np.array_equal(u, v) for u, v in zip(a.arrays(), b.arrays()))
    assert any(not np.array_equal(u, v) for u, v in zip(a.arrays(), c.arrays()))


def test_shapes_for_default_spec():
    net = init_params(LayerSpec(1, (50,), head="gaussian"), 0)
    assert [a.shape for a in net.arrays()] == [(1, 50), (50,), (50, 2), (2,)]
    audit_shapes(net)


def test_audit_rejects_bad_shape():
    net = init_params(LayerSpec(1, (4,)), 0)
    net.weights[1] = np.zeros((3, 2))
    with pytest.raises(SpecError):
        audit_shapes(net)


@pytest.mark.parametrize("kw", [dict(input_dim=0), dict(hidden_dims=(0,)),
                                dict(activation="sigmoid"), dict(head="beta")])
def test_layer_spec_validation(kw):
    with pytest.raises(SpecError):
        LayerSpec(**kw)


def test_zero_network_output():
    net = zero_net(LayerSpec(1, (5,)))
    pred = forward(net, np.array([[0.3], [-2.0]]))
    assert np.all(pred.mu == 0.0)
    assert np.allclose(pred.sigma2, variance_transform(0.0))


def test_linear_layer_by_hand():
    net = zero_net(LayerSpec(1, (), head="gaussian"))
    net.weights[0][0, 0] = 2.0
    assert forward(net, np.array([3.0])).mu[0] == 6.0


def test_forward_rejects_wrong_width_and_nan():
    net = init_params(LayerSpec(2, (3,)), 0)
    with pytest.raises(SpecError):
        forward(net, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        forward(net, np.array([[np.nan, 0.0]]))


def test_variance_transform_values():
    assert variance_transform(0.0) == pytest.approx(np.log(2) + 1e-6, abs=1e-12)
    assert variance_transform(-100.0) == pytest.approx(EPS_VAR, rel=1e-9)
    assert variance_transform(100.0) == pytest.approx(100.0 + 1e-6, rel=1e-12)


@given(st.floats(-1e3, 1e3))
def test_variance_is_positive(raw):
    assert variance_transform(raw) >= EPS_VAR


@pytest.mark.parametrize("mu,s2,y,want", [(0, 1, 0, 0.918939), (0, 1, 2, 2.918939),
                                          (1, 4, 1, 1.612086)])
def test_nll_hand_values(mu, s2, y, want):
    got = nll_loss(GaussianPrediction(np.array([mu], float), np.array([s2], float)), [y])
    assert got == pytest.approx(want, abs=1e-6)


def test_nll_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        nll_loss(GaussianPrediction(np.zeros(1), np.zeros(1)), [0.0])


def test_mse_hand_values():
    assert mse_loss([1, 2, 3], [1, 2, 3]) == 0
    assert mse_loss([0, 0], [3, 4]) == 25
    assert mse_loss([5], [2]) == 9


def test_mse_zero_residual_gives_zero_head_gradient():
    net = init_params(LayerSpec(1, (6,), head="mean_only"), 1)
    x = np.linspace(-1, 1, 5).reshape(-1, 1)
    y = forward(net, x).mu
    _, g = backward(net, x, y, "mse")
    assert np.all(g.weights[-1] == 0.0)


def test_single_unit_mse_gradient_by_hand():
    net = zero_net(LayerSpec(1, (), head="mean_only"))
    net.weights[0][0, 0] = 3.0
    loss, g = backward(net, np.array([[1.0]]), np.array([0.0]), "mse")
    assert loss == 9.0
    assert g.weights[0][0, 0] == 6.0


@pytest.mark.parametrize("loss", ["nll", "mse"])
def test_backward_loss_matches_forward(loss, rng):
    head = "gaussian" if loss == "nll" else "mean_only"
    net = init_params(LayerSpec(1, (20,), head=head), 4)
    x, y = rng.standard_normal((10, 1)), rng.standard_normal(10)
    got, _ = backward(net, x, y, loss)
    pred = forward(net, x)
    want = nll_loss(pred, y) if loss == "nll" else mse_loss(pred.mu, y) / len(y)
    assert got == pytest.approx(want, rel=1e-12)


def test_grad_check_passes_and_catches_corruption(rng):
    net = init_params(LayerSpec(1, (50,)), 2)
    x, y = rng.standard_normal((8, 1)), rng.standard_normal(8)
    assert grad_check(net, x, y, "nll").passed
    bad = grad_check(net, x, y, "nll", corrupt=True)
    assert not bad.passed
    assert bad.max_rel_err > 0.3


def test_grad_check_mean_only_mse():
    for _, _, rep in random_grad_checks(3, seed=5, losses=("mse",), head="mean_only"):
        assert rep.passed


def min_preactivation(net, x):
    a, smallest = x, np.inf
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w + b
        smallest = min(smallest, np.abs(z).min())
        a = np.maximum(z, 0.0)
    return smallest


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["relu", "tanh"]),
       st.lists(st.integers(1, 6), min_size=0, max_size=2))
def test_grad_check_random_architectures(seed, act, hidden):
    rng = np.random.default_rng(seed)
    net = init_params(LayerSpec(2, tuple(hidden), act), seed)
    # zero biases put relu pre-activations exactly on the kink, where central
    # differences are not a derivative; nudge them off it
    for b in net.biases:
        b += rng.uniform(0.05, 0.3, b.shape) * rng.choice([-1, 1], b.shape)
    x, y = rng.standard_normal((4, 2)), rng.standard_normal(4)
    if act == "relu":
        assume(min_preactivation(net, x) > 1e-3)
    assert grad_check(net, x, y, "nll").passed


def test_grad_check_step_bounds():
    net = init_params(LayerSpec(1, (2,)), 0)
    with pytest.raises(ValueError):
        grad_check(net, np.zeros((1, 1)), [0.0], "nll", step=0.1)


def test_params_copy_is_deep():
    net = init_params(LayerSpec(1, (3,)), 0)
    c = net.copy()
    c.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != c.weights[0][0, 0]
    assert isinstance(c, NetworkParams) and c.n_params == net.n_params == 3 + 3 + 6 + 2
