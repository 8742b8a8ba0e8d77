import math

import numpy as np
import pytest

from oracles import act_table, central_difference, gradcheck_phase1, rel_error, xent
from smartmixed.errors import CacheError, ConfigError, DimensionError, LabelError
from smartmixed.gumbel import gumbel_noise
from smartmixed.network import (
    OptimizerState,
    adam_step,
    backward,
    forward,
    init_network,
    make_optimizer,
    optimizer_step,
    softmax_xent,
)
from smartmixed.tensor import Rng


def _randomize(net, seed):
    r = np.random.default_rng(seed)
    for s in net.selections:
        s.logits[:] = r.normal(size=s.logits.shape)
    for layer in net.layers:
        layer.b[:] = r.normal(scale=0.1, size=layer.b.shape)
    return r


def test_init_deterministic():
    a, b = init_network([10, 7, 5, 3], 11), init_network([10, 7, 5, 3], 11)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    c = init_network([10, 7, 5, 3], 12)
    assert not np.array_equal(a.layers[0].W, c.layers[0].W)


def test_init_shapes():
    net = init_network([784, 512, 10], 0)
    assert len(net.selections) == 1 and net.selections[0].logits.shape == (512, 6)
    assert net.layers[0].W.shape == (512, 784) and net.layers[1].W.shape == (10, 512)
    assert all(np.all(layer.b == 0) for layer in net.layers)
    assert all(np.all(s.logits == 0) for s in net.selections)


def test_init_weight_variance_matches_kaiming_uniform_moment():
    # U(-sqrt(6/fan_in), +sqrt(6/fan_in)) has variance (6/fan_in)/3 = 2/fan_in
    net = init_network([784, 512, 256, 10], 3)
    for layer in net.layers:
        fan_in = layer.W.shape[1]
        bound = math.sqrt(6 / fan_in)
        assert np.abs(layer.W).max() <= bound
        assert layer.W.var() == pytest.approx(bound**2 / 3, rel=0.2)
        assert layer.W.var() == pytest.approx(2 / fan_in, rel=0.2)


@pytest.mark.parametrize("arch", [[784], [784, 0, 10], [5, -1, 2]])
def test_init_rejects_bad_architecture(arch):
    with pytest.raises(ConfigError):
        init_network(arch, 0)


def test_zero_image_symmetry():
    net = init_network([8, 6, 4], 0)
    net.layers[0].W[:] = 0
    out, _ = forward(net, np.zeros((1, 8)), noise_mode="zero")
    assert np.all(out == out[0, 0])


def test_forced_relu_equals_plain_mlp(rng):
    net = init_network([12, 9, 7, 4], 2)
    for s in net.selections:
        s.logits[:, 0] = 50.0
    X = rng.random((6, 12))
    out, _ = forward(net, X, rng=Rng(1))
    x = X
    for layer in net.layers[:-1]:
        x = np.maximum(x @ layer.W.T + layer.b, 0)
    ref = x @ net.layers[-1].W.T + net.layers[-1].b
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_forward_replay_deterministic(rng):
    net = init_network([12, 9, 7, 4], 2)
    _randomize(net, 1)
    X = rng.random((6, 12))
    a, _ = forward(net, X, rng=Rng(4).child("noise"))
    b, _ = forward(net, X, rng=Rng(4).child("noise"))
    assert np.array_equal(a, b)


def test_forward_shape_error():
    with pytest.raises(DimensionError):
        forward(init_network([5, 3, 2], 0), np.zeros((2, 4)), noise_mode="zero")


def test_xent_uniform_logits():
    loss, _ = softmax_xent(np.zeros((3, 10)), [0, 4, 9])
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_xent_peaked():
    logits = np.zeros((2, 10))
    logits[0, 3] = logits[1, 7] = 30
    assert softmax_xent(logits, [3, 7])[0] < 1e-3


def test_xent_gradient_finite_differences(rng):
    logits = rng.normal(size=(4, 10))
    labels = np.array([1, 0, 9, 4])
    loss, grad = softmax_xent(logits, labels)
    assert loss == pytest.approx(xent(logits, labels), abs=1e-13)
    fd = central_difference(lambda: xent(logits, labels), logits)
    assert np.max(np.abs(fd - grad)) < 1e-6


def test_xent_label_error():
    with pytest.raises(LabelError):
        softmax_xent(np.zeros((2, 10)), [0, 10])
    with pytest.raises(LabelError):
        softmax_xent(np.zeros((1, 10)), [-1])


def test_backward_zero_upstream(rng):
    net = init_network([5, 4, 3], 0)
    _randomize(net, 0)
    out, cache = forward(net, rng.random((3, 5)), rng=Rng(0))
    g = backward(net, cache, np.zeros_like(out))
    assert all(np.all(x == 0) for x in g.as_list())


def test_single_linear_layer_gradient(rng):
    net = init_network([5, 3], 0)
    X = rng.random((4, 5))
    out, cache = forward(net, X)
    dL = rng.normal(size=out.shape)
    g = backward(net, cache, dL)
    np.testing.assert_allclose(g.dW[0], dL.T @ X, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(g.db[0], dL.sum(axis=0), rtol=1e-13)


def test_gradcheck_small_net():
    net = init_network([4, 3, 2], 1)
    _randomize(net, 1)
    r = np.random.default_rng(2)
    X, y = r.random((5, 4)), r.integers(0, 2, 5)
    noise = [gumbel_noise(Rng(3).child(l), s.n, 6) for l, s in enumerate(net.selections)]
    errs = gradcheck_phase1(net, X, y, noise)
    assert max(errs.values()) < 1e-5, errs


def test_gradcheck_per_sample_noise():
    net = init_network([6, 5, 4, 3], 4)
    _randomize(net, 4)
    r = np.random.default_rng(4)
    X, y = r.random((3, 6)), r.integers(0, 3, 3)
    noise = [gumbel_noise(Rng(5).child(l), 3 * s.n, 6).reshape(3, s.n, 6) for l, s in enumerate(net.selections)]
    errs = gradcheck_phase1(net, X, y, noise)
    assert max(errs.values()) < 1e-5, errs


def test_gradcheck_with_temperature():
    net = init_network([6, 5, 4, 3], 6, tau=0.5)
    _randomize(net, 6)
    r = np.random.default_rng(6)
    X, y = r.random((4, 6)), r.integers(0, 3, 4)
    noise = [gumbel_noise(Rng(6).child(l), s.n, 6) for l, s in enumerate(net.selections)]
    errs = gradcheck_phase1(net, X, y, noise)
    assert max(errs.values()) < 1e-5, errs


def test_stale_cache_rejected(rng):
    net = init_network([5, 4, 3], 0)
    X = rng.random((2, 5))
    out, cache = forward(net, X, rng=Rng(0))
    _, d = softmax_xent(out, [0, 1])
    g = backward(net, cache, d)
    with pytest.raises(CacheError):
        backward(net, cache, d)  # already consumed
    out, cache = forward(net, X, rng=Rng(0))
    optimizer_step(net, g, make_optimizer(net))
    with pytest.raises(CacheError):
        backward(net, cache, d)  # parameters changed since the forward pass


def test_adam_zero_gradient_leaves_parameters():
    p = np.array([1.0, -2.0, 3.0])
    opt = OptimizerState.for_params([p])
    adam_step([p], [np.zeros(3)], opt)
    assert p.tolist() == [1.0, -2.0, 3.0]


def test_adam_one_step_hand_value():
    p, g = np.array([0.5, -1.0]), np.array([0.2, -0.4])
    opt = OptimizerState.for_params([p], lr=0.01)
    adam_step([p], [g], opt)
    # m = 0.1 g, v = 0.001 g^2; bias corrected m_hat = g, v_hat = g^2
    # step = lr * g / (|g| + eps)
    want = np.array([0.5 - 0.01 * 0.2 / (0.2 + 1e-8), -1.0 + 0.01 * 0.4 / (0.4 + 1e-8)])
    np.testing.assert_allclose(p, want, rtol=1e-14)
    np.testing.assert_allclose(opt.m[0], 0.1 * g, rtol=1e-14)
    np.testing.assert_allclose(opt.v[0], 0.001 * g * g, rtol=1e-14)


def test_adam_two_steps_hand_value():
    p = np.array([0.0])
    opt = OptimizerState.for_params([p], lr=0.1)
    adam_step([p], [np.array([1.0])], opt)
    adam_step([p], [np.array([3.0])], opt)
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999**2)
    want = -0.1 * (1 / (1 + 1e-8)) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p[0] == pytest.approx(want, rel=1e-13)


def test_adam_constant_gradient_direction():
    p = np.zeros(3)
    g = np.array([2.0, -0.5, 1e-3])
    opt = OptimizerState.for_params([p], lr=1e-3)
    for _ in range(200):
        adam_step([p], [g], opt)
    np.testing.assert_allclose(p, -200 * 1e-3 * np.sign(g), rtol=1e-3)


def test_overfit_64_samples():
    r = np.random.default_rng(0)
    X = r.random((64, 784))
    y = r.integers(0, 10, 64)
    net = init_network([784, 64, 10], 0)
    opt = make_optimizer(net)
    noise_rng = Rng(0).child("noise")
    loss = None
    for step in range(500):
        out, cache = forward(net, X, rng=noise_rng.child(step))
        loss, d = softmax_xent(out, y)
        if loss < 0.01:
            break
        optimizer_step(net, backward(net, cache, d), opt)
    assert loss < 0.01


def test_logit_lr_multiplier_scales_only_logits():
    net = init_network([5, 4, 3], 0)
    opt = make_optimizer(net, lr=1e-3, logit_lr_multiplier=10.0)
    assert opt.lr_scale == [1.0] * 4 + [10.0]
