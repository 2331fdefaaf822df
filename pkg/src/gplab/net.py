"""Bias-free masked MLP in NTK parameterization, with manual backprop and Adam.

Layer ``l`` computes ``z = h_prev @ W.T / sqrt(n_prev)``; hidden layers apply
ReLU, the last layer is linear. Weights are stored with pruned entries set to
exactly zero and they stay zero through every update.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import math

import numpy as np

from .errors import DomainError, NumericOverflowError, StructuralError, UsageError
from .numerics import Rng


def kept_count(n: int, sparsity: float) -> int:
    """ceil((1 - sparsity) * n), computed on the decimal value of ``sparsity``."""
    p = Fraction(repr(float(sparsity)))
    return n - math.floor(p * n)


@dataclass
class Mask:
    """Binary keep-masks for every layer (shape n_l x n_{l-1}).

    ``prunable`` marks the layers that take part in pruning; ``target`` is the
    sparsity (fraction removed) requested over those layers.
    """

    layers: list[np.ndarray]
    prunable: list[bool]
    target: float = 0.0

    def __post_init__(self):
        self.layers = [np.asarray(m).astype(bool) for m in self.layers]
        if len(self.prunable) != len(self.layers):
            raise StructuralError("prunable flags must match layer count")

    @classmethod
    def dense(cls, widths, prune_io: bool = False) -> "Mask":
        n = len(widths) - 1
        layers = [np.ones((widths[i + 1], widths[i]), dtype=bool) for i in range(n)]
        return cls(layers, default_prunable(n, prune_io), 0.0)

    @property
    def shapes(self):
        return [m.shape for m in self.layers]

    def counts(self):
        """(kept, total) over prunable layers."""
        kept = sum(int(m.sum()) for m, p in zip(self.layers, self.prunable) if p)
        total = sum(m.size for m, p in zip(self.layers, self.prunable) if p)
        return kept, total

    def sparsity(self) -> float:
        kept, total = self.counts()
        return (total - kept) / total if total else 0.0

    def layer_sparsity(self):
        return [1.0 - float(m.mean()) for m in self.layers]

    def copy(self) -> "Mask":
        return Mask([m.copy() for m in self.layers], list(self.prunable), self.target)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (self.prunable == other.prunable and self.target == other.target
                and len(self.layers) == len(other.layers)
                and all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers)))


def default_prunable(n_layers: int, prune_io: bool = False) -> list[bool]:
    # input and output layers stay dense unless asked otherwise
    if prune_io:
        return [True] * n_layers
    return [0 < l < n_layers - 1 for l in range(n_layers)]


@dataclass
class ForwardResult:
    inputs: np.ndarray
    pre: list[np.ndarray]       # z^(1..L+1)
    post: list[np.ndarray]      # h^(0..L); h^(0) = inputs
    outputs: np.ndarray


@dataclass
class MaskedMlp:
    widths: list[int]
    weights: list[np.ndarray]
    mask: Mask
    sigma_w2: float = 1.0
    activation: str = "relu"
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [np.zeros_like(w) for w in self.weights]
        if not self.adam_v:
            self.adam_v = [np.zeros_like(w) for w in self.weights]

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.widths) - 2

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MaskedMlp":
        return MaskedMlp(list(self.widths), [w.copy() for w in self.weights], self.mask.copy(),
                         self.sigma_w2, self.activation, [m.copy() for m in self.adam_m],
                         [v.copy() for v in self.adam_v], self.step)

    def apply_mask(self, mask: Mask) -> None:
        _check_shapes(self.widths, mask)
        self.mask = mask
        for w, m, a, b in zip(self.weights, mask.layers, self.adam_m, self.adam_v):
            w[~m] = 0.0
            a[~m] = 0.0
            b[~m] = 0.0

    def n_params(self) -> int:
        return sum(int(m.sum()) for m in self.mask.layers)


def _check_shapes(widths, mask):
    if len(mask.layers) != len(widths) - 1:
        raise StructuralError(f"mask has {len(mask.layers)} layers, widths imply {len(widths) - 1}")
    for l, m in enumerate(mask.layers):
        if m.shape != (widths[l + 1], widths[l]):
            raise StructuralError(f"mask layer {l + 1} has shape {m.shape}, "
                                  f"expected {(widths[l + 1], widths[l])}")


def init(widths, mask: Mask | None = None, sigma_w2: float = 1.0, rng: Rng | None = None,
         activation: str = "relu", variances=None) -> MaskedMlp:
    """Fresh network: kept weights ~ N(0, sigma_w2), pruned weights exactly 0.

    ``variances`` (one array per layer) replaces ``sigma_w2`` with
    position-dependent variances, the graphon-modulated initialization.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise StructuralError(f"invalid widths {widths}")
    if sigma_w2 <= 0:
        raise DomainError("sigma_w2 must be positive")
    if activation not in ("relu", "linear"):
        raise DomainError(f"unknown activation {activation!r}")
    mask = mask if mask is not None else Mask.dense(widths)
    _check_shapes(widths, mask)
    rng = rng or Rng(0)
    weights = []
    for l, m in enumerate(mask.layers):
        var = sigma_w2 if variances is None else np.asarray(variances[l], dtype=np.float64)
        w = rng.spawn(l).normal(m.shape) * np.sqrt(var)
        w[~m] = 0.0
        weights.append(w)
    return MaskedMlp(widths, weights, mask, float(sigma_w2), activation)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_deriv(z, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else np.ones_like(z)


def forward(net: MaskedMlp, inputs) -> ForwardResult:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.widths[0]:
        raise StructuralError(f"inputs must be B x {net.widths[0]}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("inputs contain non-finite values")
    pre, post = [], [x]
    h = x
    for l, w in enumerate(net.weights):
        with np.errstate(over="ignore", invalid="ignore"):
            z = (h @ w.T) / math.sqrt(w.shape[1])
        if not np.all(np.isfinite(z)):
            raise NumericOverflowError(f"non-finite pre-activation at layer {l + 1}", layer=l + 1)
        pre.append(z)
        if l < net.n_layers - 1:
            h = _act(z, net.activation)
            post.append(h)
    return ForwardResult(x, pre, post, pre[-1])


def backprop_deltas(net: MaskedMlp, cache: ForwardResult, out_grad) -> list[np.ndarray]:
    """dOut/dz^(l) for every layer, row a belonging to sample a."""
    delta = np.asarray(out_grad, dtype=np.float64)
    deltas = [delta]
    for l in range(net.n_layers - 1, 0, -1):
        w = net.weights[l]
        delta = (delta @ w) / math.sqrt(w.shape[1]) * _act_deriv(cache.pre[l - 1], net.activation)
        deltas.append(delta)
    return deltas[::-1]


def backward(net: MaskedMlp, cache: ForwardResult | None, loss_grad) -> list[np.ndarray]:
    """Weight gradients given dLoss/dOutputs (B x C); pruned entries are 0."""
    if cache is None:
        raise UsageError("backward needs the forward result for these inputs")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != cache.outputs.shape:
        raise StructuralError(f"loss gradient shape {loss_grad.shape} != outputs {cache.outputs.shape}")
    deltas = backprop_deltas(net, cache, loss_grad)
    grads = []
    for l, (d, h) in enumerate(zip(deltas, cache.post)):
        g = (d.T @ h) / math.sqrt(h.shape[1])
        g[~net.mask.layers[l]] = 0.0
        grads.append(g)
    return grads


def adam_step(net: MaskedMlp, gradients, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    if len(gradients) != net.n_layers:
        raise StructuralError("one gradient per layer expected")
    net.step += 1
    c1 = 1.0 - beta1 ** net.step
    c2 = 1.0 - beta2 ** net.step
    for w, g, m, v, keep in zip(net.weights, gradients, net.adam_m, net.adam_v, net.mask.layers):
        if g.shape != w.shape:
            raise StructuralError(f"gradient shape {g.shape} != weight shape {w.shape}")
        g = np.where(keep, g, 0.0)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        w[~keep] = 0.0


def loss_and_grad(outputs, labels):
    """Mean softmax cross-entropy and its gradient (softmax - onehot) / B."""
    z = np.asarray(outputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = z.shape
    if c < 2:
        raise DomainError("cross-entropy needs at least 2 outputs")
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
        raise DomainError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - lse[:, None]
    loss = float(-logp[np.arange(b), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def squared_loss_and_grad(outputs, targets):
    """Mean over samples of sum_c (f - y)^2, and its gradient."""
    z = np.asarray(outputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    r = z - y
    return float((r * r).sum() / len(z)), 2.0 * r / len(z)


def batch_loss(net: MaskedMlp, inputs, labels, loss: str = "ce"):
    """Loss, forward cache and weight gradients on one batch."""
    cache = forward(net, inputs)
    if loss == "ce":
        value, g = loss_and_grad(cache.outputs, labels)
    elif loss == "mse":
        labels = np.asarray(labels)
        if cache.outputs.shape[1] == 1:
            targets = labels.astype(np.float64)
        else:
            targets = np.eye(cache.outputs.shape[1])[labels]
        value, g = squared_loss_and_grad(cache.outputs, targets)
    else:
        raise DomainError(f"unknown loss {loss!r}")
    return value, cache, backward(net, cache, g)
