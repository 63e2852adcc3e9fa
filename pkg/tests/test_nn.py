import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skillbridge.nn import (Network, OptimizerState, ShapeError, backward, forward, gaussian_nll,
                            gaussian_nll_grad, optimizer_step, param_count, softplus)


def make_net(sizes, acts=None, seed=0):
    acts = acts or ["tanh"] * (len(sizes) - 2) + ["identity"]
    return Network.build(sizes, acts, rng=np.random.default_rng(seed))


def numeric_grad(f, x, h=1e-6):
    flat = x.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def test_param_count_and_views_share_buffer():
    net = make_net([3, 4, 2])
    assert net.params.size == param_count([3, 4, 2]) == 3 * 4 + 4 + 4 * 2 + 2
    net.layers[0].weights[0, 0] = 42.0
    assert net.params[0] == 42.0


def test_glorot_bounds_and_zero_bias():
    net = make_net([10, 30, 5])
    for layer in net.layers:
        limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
        assert np.all(np.abs(layer.weights) <= limit)
        assert np.all(layer.bias == 0.0)


def test_forward_by_hand():
    net = Network.build([2, 2, 1], ["tanh", "identity"])
    net.layers[0].weights[...] = [[1.0, 0.0], [0.0, 2.0]]
    net.layers[0].bias[...] = [0.5, 0.0]
    net.layers[1].weights[...] = [[1.0, -1.0]]
    net.layers[1].bias[...] = [0.25]
    x = np.array([0.1, 0.3])
    expected = np.tanh(0.6) - np.tanh(0.6) + 0.25
    assert forward(net, x)[0] == pytest.approx(expected, abs=1e-15)
    batch = forward(net, np.vstack([x, -x]))
    assert batch.shape == (2, 1)
    assert batch[1, 0] == pytest.approx(np.tanh(0.4) - np.tanh(-0.6) + 0.25, abs=1e-15)


def test_forward_rejects_wrong_width():
    net = make_net([3, 4, 2])
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))


def test_build_rejects_bad_activation_count():
    with pytest.raises(ShapeError):
        Network.build([2, 3, 1], ["tanh"])
    with pytest.raises(ValueError):
        Network.build([2, 1], ["sigmoid"])


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_backward_matches_finite_differences(act):
    rng = np.random.default_rng(1)
    net = make_net([3, 5, 4, 2], [act, act, "identity"], seed=2)
    x = rng.normal(size=(6, 3))
    c = rng.normal(size=(6, 2))
    out, cache = forward(net, x, keep_cache=True)
    grads, gin = backward(net, cache, c)
    num = numeric_grad(lambda: float(np.sum(forward(net, x) * c)), net.params)
    assert np.allclose(grads, num, rtol=1e-5, atol=1e-8)
    num_in = numeric_grad(lambda: float(np.sum(forward(net, x) * c)), x)
    assert np.allclose(gin, num_in, rtol=1e-5, atol=1e-8)


def test_backward_accumulates_into_buffer():
    net = make_net([2, 3, 1])
    x = np.ones(2)
    _, cache = forward(net, x, keep_cache=True)
    buf = np.zeros_like(net.params)
    backward(net, cache, np.ones(1), buf)
    once = buf.copy()
    backward(net, cache, np.ones(1), buf)
    assert np.allclose(buf, 2 * once)


def test_softplus_stable():
    assert softplus(np.array(1000.0)) == pytest.approx(1000.0)
    assert softplus(np.array(-1000.0)) == pytest.approx(0.0, abs=1e-300)
    assert softplus(np.array(0.0)) == pytest.approx(np.log(2.0))


def test_gaussian_nll_standard_normal():
    # N(0, 1) evaluated at its mean
    assert gaussian_nll([0.0], [1.0], [0.0]) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-15)
    assert gaussian_nll([0.0], [2.0], [2.0]) == pytest.approx(np.log(2.0) + 0.5 + 0.5 * np.log(2 * np.pi))


def test_gaussian_nll_rejects_nonpositive_std():
    with pytest.raises(ValueError):
        gaussian_nll([0.0], [0.0], [0.0])
    with pytest.raises(ShapeError):
        gaussian_nll([0.0, 1.0], [1.0], [0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 3), st.floats(-3, 3))
def test_gaussian_nll_grad_matches_numeric(m, s, y):
    dm, ds = gaussian_nll_grad([m], [s], [y])
    h = 1e-6
    num_m = (gaussian_nll([m + h], [s], [y]) - gaussian_nll([m - h], [s], [y])) / (2 * h)
    num_s = (gaussian_nll([m], [s + h], [y]) - gaussian_nll([m], [s - h], [y])) / (2 * h)
    assert dm[0] == pytest.approx(num_m, rel=1e-5, abs=1e-6)
    assert ds[0] == pytest.approx(num_s, rel=1e-5, abs=1e-6)


def test_adam_first_step_is_lr_times_sign():
    # bias correction makes the first step lr * g / (|g| + eps)
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    state = OptimizerState.for_params([p], lr=0.01)
    optimizer_step([p], [g], state)
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p, expected, rtol=0, atol=1e-12)
    assert state.step == 1


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(3)
    p = rng.normal(size=5)
    ref = p.copy()
    state = OptimizerState.for_params([p], lr=1e-3)
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 11):
        g = rng.normal(size=5)
        optimizer_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p, ref, rtol=0, atol=1e-14)


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -2.0])
    state = OptimizerState.for_params([p], lr=0.05)
    for _ in range(2000):
        optimizer_step([p], [2 * p], state)
    assert np.linalg.norm(p) < 1e-3


def test_adam_shape_mismatch():
    p = np.zeros(3)
    state = OptimizerState.for_params([p])
    with pytest.raises(ShapeError):
        optimizer_step([p], [np.zeros(4)], state)
