import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gplab.errors import NumericOverflowError, StructuralError, UsageError
from gplab.net import (Mask, adam_step, backward, batch_loss, forward, init, kept_count,
                       loss_and_grad, squared_loss_and_grad)
from gplab.numerics import Rng


def random_mask(widths, density, seed):
    g = np.random.default_rng(seed)
    layers = [g.random((widths[i + 1], widths[i])) < density for i in range(len(widths) - 1)]
    return Mask(layers, [True] * len(layers), 1 - density)


def fd_grad(net, x, y, l, i, j, eps=1e-6, loss="ce"):
    w = net.weights[l]
    old = w[i, j]
    w[i, j] = old + eps
    fp = batch_loss(net, x, y, loss)[0]
    w[i, j] = old - eps
    fm = batch_loss(net, x, y, loss)[0]
    w[i, j] = old
    return (fp - fm) / (2 * eps)


def test_kept_count_uses_decimal_sparsity():
    assert kept_count(1000, 0.8) == 200
    assert kept_count(10, 0.7) == 3
    assert kept_count(7, 0.5) == 4
    assert kept_count(5, 0.0) == 5


def test_init_zeroes_pruned_weights():
    m = random_mask([6, 5, 4], 0.5, 0)
    net = init([6, 5, 4], m, 1.0, Rng(0))
    for w, k in zip(net.weights, m.layers):
        assert np.all(w[~k] == 0.0)


def test_linear_one_layer_forward():
    net = init([4, 1], None, 1.0, Rng(2), activation="linear")
    x = np.arange(8.0).reshape(2, 4)
    assert np.allclose(forward(net, x).outputs, x @ net.weights[0].T / 2.0)


def test_cross_entropy_value():
    loss, g = loss_and_grad(np.zeros((2, 4)), np.array([0, 3]))
    assert math.isclose(loss, math.log(4))
    assert np.allclose(g.sum(axis=1), 0.0)


def test_squared_loss_value():
    loss, g = squared_loss_and_grad(np.array([[1.0], [3.0]]), np.array([0.0, 1.0]))
    assert loss == (1 + 4) / 2 and np.allclose(g, [[1.0], [2.0]])


@given(st.integers(0, 10_000))
def test_backward_matches_finite_differences(seed):
    g = np.random.default_rng(seed)
    depth = int(g.integers(1, 4))
    widths = [int(g.integers(2, 7))] + [int(g.integers(2, 8)) for _ in range(depth)] + [int(g.integers(2, 5))]
    net = init(widths, random_mask(widths, 0.6, seed), 1.0, Rng(seed))
    x = g.normal(size=(5, widths[0]))
    y = g.integers(0, widths[-1], 5)
    _, _, grads = batch_loss(net, x, y)
    for l, w in enumerate(net.weights):
        for i, j in zip(*np.nonzero(net.mask.layers[l])):
            fd = fd_grad(net, x, y, l, i, j)
            assert abs(grads[l][i, j] - fd) <= 1e-5 * max(1e-3, abs(fd))
        assert np.all(grads[l][~net.mask.layers[l]] == 0.0)


def test_backward_needs_cache():
    net = init([3, 2, 2], None, 1.0, Rng(0))
    with pytest.raises(UsageError):
        backward(net, None, np.zeros((1, 2)))


def test_overflow_reports_layer():
    net = init([2, 3, 2], None, 1.0, Rng(0))
    net.weights[1][:] = 1e308
    with pytest.raises(NumericOverflowError) as ei:
        forward(net, np.full((1, 2), 1e10))
    assert ei.value.layer == 2


def test_adam_keeps_pruned_weights_zero_and_lowers_loss():
    widths = [6, 8, 3]
    net = init(widths, random_mask(widths, 0.5, 1), 1.0, Rng(1))
    g = np.random.default_rng(0)
    x, y = g.normal(size=(16, 6)), g.integers(0, 3, 16)
    first = batch_loss(net, x, y)[0]
    for _ in range(50):
        _, _, grads = batch_loss(net, x, y)
        adam_step(net, grads, lr=1e-2)
    assert batch_loss(net, x, y)[0] < first
    for w, k in zip(net.weights, net.mask.layers):
        assert np.all(w[~k] == 0.0)


def test_adam_first_step_is_lr_sign():
    net = init([2, 2], None, 1.0, Rng(0), activation="linear")
    before = net.weights[0].copy()
    grads = [np.array([[1.0, -2.0], [0.5, 3.0]])]
    adam_step(net, grads, lr=0.1, eps=0.0)
    assert np.allclose(net.weights[0] - before, -0.1 * np.sign(grads[0]))


def test_shape_errors():
    with pytest.raises(StructuralError):
        init([3, 2], Mask.dense([4, 2]), 1.0, Rng(0))
    net = init([3, 2], None, 1.0, Rng(0))
    with pytest.raises(StructuralError):
        forward(net, np.ones((2, 4)))
