import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gplab.data import Batch, SyntheticSpec, make_batch
from gplab.errors import ConditioningError, DomainError
from gplab.experiments import pai_masks
from gplab.graphon import estimate_sas
from gplab.net import Mask, init, kept_count
from gplab.numerics import Rng
from gplab.prune import (ScoreSet, fd_epsilon, fd_hessian_vector, global_mask, prune, score_grasp,
                         score_magnitude, score_random, score_snip, score_synflow, write_scores_csv)

WIDTHS = [784, 256, 256, 256, 256, 10]


def small_net(widths=(5, 6, 6, 3), seed=0):
    return init(list(widths), Mask.dense(list(widths)), 1.0, Rng(seed))


def small_batch(d=5, c=3, seed=0):
    return make_batch(SyntheticSpec(n_classes=c, dim=d), 12, "scale-255", Rng(seed))


def test_global_mask_keeps_top_three():
    m = global_mask([np.arange(1.0, 11.0).reshape(1, 10)], 0.7)
    assert np.flatnonzero(m.layers[0][0]).tolist() == [7, 8, 9]


def test_global_mask_tie_rule():
    m = global_mask([np.ones((2, 2))], 0.5)
    assert m.layers[0].tolist() == [[True, True], [False, False]]


def test_global_mask_ties_across_layers():
    m = global_mask([np.ones((1, 2)), np.ones((1, 2))], 0.5)
    assert m.layers[0].all() and not m.layers[1].any()


@given(st.integers(0, 1000), st.sampled_from([0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.999]))
def test_global_mask_exact_count(seed, p):
    g = np.random.default_rng(seed)
    scores = [g.integers(0, 4, (3, 7)).astype(float), g.normal(size=(5, 2))]
    m = global_mask(scores, p)
    n = 21 + 10
    assert sum(int(x.sum()) for x in m.layers) == kept_count(n, p)


def test_global_mask_rejects_full_sparsity():
    with pytest.raises(DomainError):
        global_mask([np.ones((2, 2))], 1.0)


def test_random_and_magnitude_scores():
    net = small_net()
    s = score_random(net, Rng(1))
    assert all((x >= 0).all() and (x < 1).all() for x in s.layers)
    assert np.array_equal(s.layers[0], score_random(net, Rng(1)).layers[0])
    net.weights[0][0, 0] = 0.0
    mag = score_magnitude(net)
    assert mag.layers[0][0, 0] == 0.0
    flipped = net.copy()
    flipped.weights = [-w for w in flipped.weights]
    assert all(np.array_equal(a, b) for a, b in zip(mag.layers, score_magnitude(flipped).layers))


def test_snip_single_neuron_hand_gradient():
    net = init([1, 1], None, 1.0, Rng(0), activation="linear")
    net.weights[0][:] = 3.0
    batch = Batch(np.array([[2.0]]), np.array([0]), 1)
    s = score_snip(net, batch, loss="mse")
    assert s.layers[0][0, 0] == pytest.approx(72.0)


def test_fd_hessian_vector_quadratic_oracle():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    theta = np.array([1.0, 1.0])
    g = a @ theta
    assert g.tolist() == [3.0, 4.0]
    hv = fd_hessian_vector(lambda t: a @ t, theta, g, 1e-3)
    assert np.allclose(hv, [10.0, 15.0], atol=1e-9)


def test_fd_hessian_vector_error_is_second_order():
    f = lambda t: np.array([t[0] ** 3 + t[1], t[0] * t[1] ** 2])  # gradient of a cubic
    theta, v = np.array([0.7, -0.4]), np.array([0.3, 0.5])
    jac = np.array([[3 * theta[0] ** 2, 1.0], [theta[1] ** 2, 2 * theta[0] * theta[1]]])
    e1 = np.abs(fd_hessian_vector(f, theta, v, 1e-2) - jac @ v).max()
    e2 = np.abs(fd_hessian_vector(f, theta, v, 5e-3) - jac @ v).max()
    assert e2 < e1 / 3


def test_fd_epsilon_underflow():
    with pytest.raises(ConditioningError):
        fd_epsilon(1.0, 1e308 * 10, 1e-3)
    with pytest.raises(ConditioningError):
        fd_epsilon(1.0, 1e300, 1e-320)


def test_grasp_restores_weights_and_moments():
    net = small_net()
    net.adam_m[0][:] = 0.25
    before = [w.copy() for w in net.weights]
    m_before = [m.copy() for m in net.adam_m]
    score_grasp(net, small_batch())
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))
    assert all(np.array_equal(a, b) for a, b in zip(m_before, net.adam_m))


def test_grasp_zero_gradient_gives_zero_scores():
    net = small_net()
    for w in net.weights:
        w[:] = 0.0
    s = score_grasp(net, small_batch())
    assert all(not x.any() for x in s.layers)


def test_grasp_prunes_largest_negated_product():
    net = small_net()
    batch = small_batch()
    s = score_grasp(net, batch)
    mask = prune(net.copy(), "grasp", 0.5, batch=batch)
    hidden = s.layers[1]
    kept, removed = hidden[mask.layers[1]], hidden[~mask.layers[1]]
    assert kept.max() <= removed.min()


def test_synflow_chain_path_product():
    net = init([1, 1, 1], Mask([np.ones((1, 1)), np.ones((1, 1))], [True, True]), 1.0, Rng(0))
    net.weights[0][:] = 2.0
    net.weights[1][:] = -3.0
    from gplab.prune import _synflow_log_scores
    absw = [np.abs(w) for w in net.weights]
    logs = _synflow_log_scores(absw, [np.log(a) for a in absw], net.mask.layers, [True, True])
    assert math.exp(logs[0][0, 0]) == pytest.approx(6.0)
    assert math.exp(logs[1][0, 0]) == pytest.approx(6.0)


def test_synflow_zero_sparsity_is_dense():
    net = small_net()
    m = score_synflow(net, 0.0, rounds=5)
    assert all(x.all() for x in m.layers)


def test_synflow_rounds_are_nested_and_exact():
    net = small_net((5, 12, 12, 12, 3))
    hist = []
    final = score_synflow(net, 0.8, rounds=10, history=hist)
    assert len(hist) == 10 and hist[-1] == final
    for a, b in zip(hist, hist[1:]):
        for la, lb in zip(a.layers, b.layers):
            assert not (lb & ~la).any()
    kept, total = final.counts()
    assert kept == kept_count(total, 0.8)


@pytest.mark.parametrize("method", ["random", "magnitude", "snip", "grasp", "synflow"])
@pytest.mark.parametrize("p", [0.5, 0.7, 0.8, 0.9, 0.95])
def test_sparsity_exact_for_every_method(method, p):
    widths = [20, 16, 16, 16, 4]
    m = pai_masks(method, widths, p, Rng(3), rounds=10, batch_size=16)
    kept, total = m.counts()
    assert abs((total - kept) / total - p) < 1 / total
    assert m.layers[0].all() and m.layers[-1].all()


def test_snip_histogram_is_structured():
    v_rand = estimate_sas(pai_masks("random", WIDTHS, 0.8, Rng(0)).layers[2]).grid.var()
    v_snip = estimate_sas(pai_masks("snip", WIDTHS, 0.8, Rng(0)).layers[2]).grid.var()
    assert v_snip > 3 * v_rand


def test_synflow_histogram_is_block_like():
    g = estimate_sas(pai_masks("synflow", WIDTHS, 0.9, Rng(0)).layers[2]).grid
    assert (g < 0.01).mean() >= 0.30


def test_magnitude_and_random_histograms_indistinguishable():
    from scipy.stats import ttest_ind
    def stats(method):
        gs = [estimate_sas(pai_masks(method, WIDTHS, 0.8, Rng(s)).layers[2]).grid for s in range(6)]
        return np.array([[g[0, 0], g[-1, -1], g.var()] for g in gs])
    r, m = stats("random"), stats("magnitude")
    for j in range(3):
        assert ttest_ind(r[:, j], m[:, j]).pvalue > 0.01


def test_score_set_rejects_non_finite():
    with pytest.raises(DomainError):
        ScoreSet([np.array([[np.inf]])], "snip")


def test_scores_csv(tmp_path):
    s = ScoreSet([np.array([[1.5, 2.0]])], "magnitude")
    write_scores_csv(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["layer,row,col,score", "1,0,0,1.5", "1,0,1,2.0"]
