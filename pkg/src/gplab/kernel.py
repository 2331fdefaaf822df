"""Neural tangent kernels: empirical (finite masked nets), analytic graphon
recursions, and the constant-graphon closed form.

The analytic kernel keeps one value per grid position for each covariance
(the cross-position covariances vanish), so a pair of inputs costs O(L R^2)
through the R x R graphon matrices.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError, NumericError, ShapeError
from .graphon import DEFAULT_K, StepGraphon, expand, sample_mask
from .net import Mask, MaskedMlp, backprop_deltas, forward, init
from .numerics import Rng

DEFAULT_GRID = 256
CS_TOL = 1e-12


def fingerprint(inputs) -> bytes:
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    h = hashlib.sha256()
    h.update(np.asarray(x.shape, dtype="<u8").tobytes())
    h.update(x.astype("<f8").tobytes())
    return h.digest()


@dataclass
class KernelMatrix:
    values: np.ndarray
    fingerprint: bytes = b"\0" * 32
    kind: str = "empirical"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"kernel must be square, got {v.shape}")
        self.values = v
        if len(self.fingerprint) != 32:
            raise ShapeError("fingerprint must be 32 bytes")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KernelMatrix):
            return NotImplemented
        return self.fingerprint == other.fingerprint and np.array_equal(self.values, other.values)


# --------------------------------------------------------------------------
# ReLU moments
# --------------------------------------------------------------------------

def relu_gauss_moments(sxx, sxy, syy):
    """E[relu(z) relu(z')] and E[relu'(z) relu'(z')] for (z, z') ~ N(0, [[sxx, sxy], [sxy, syy]]).

    Accepts scalars or equal-shape arrays. Correlations beyond +-1 by at most
    1e-12 are clipped; larger violations raise :class:`DomainError`.
    """
    scalar = np.ndim(sxx) == 0 and np.ndim(sxy) == 0 and np.ndim(syy) == 0
    sxx, sxy, syy = np.broadcast_arrays(np.asarray(sxx, float), np.asarray(sxy, float), np.asarray(syy, float))
    if np.any(sxx < 0) or np.any(syy < 0):
        raise DomainError("variances must be non-negative")
    act, dot, worst = _kernels.relu_moments(sxx, sxy, syy)
    if worst > CS_TOL:
        raise DomainError(f"Cauchy-Schwarz violated (|rho| - 1 = {worst:.3e})")
    if scalar:
        return float(act[0]), float(dot[0])
    return act.reshape(sxx.shape), dot.reshape(sxx.shape)


# --------------------------------------------------------------------------
# graphon stacks
# --------------------------------------------------------------------------

@dataclass
class GraphonStack:
    """Graphons W^(1..L+1). Entries are :class:`StepGraphon` or vectorised callables ``fn(u, v)``.

    W^(1) maps layer-1 positions x input coordinates, W^(L+1) output x layer-L.
    """

    layers: list

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @classmethod
    def constant(cls, c: float, depth: int, k: int = 1, dense_io: bool = False) -> "GraphonStack":
        layers = [StepGraphon.constant(c, k) for _ in range(depth + 1)]
        if dense_io:
            layers[0] = StepGraphon.constant(1.0, k)
            layers[-1] = StepGraphon.constant(1.0, k)
        return cls(layers)

    @classmethod
    def from_mask(cls, mask: Mask, k: int = DEFAULT_K) -> "GraphonStack":
        """Block densities of each layer in its own node order (no re-sorting)."""
        from .graphon import block_average
        out = []
        for m in mask.layers:
            if m.all():
                out.append(StepGraphon.constant(1.0, 1))
            else:
                kk = min(k, *m.shape)
                out.append(block_average(m, kk))
        return cls(out)

    def values(self, l: int, n_out: int, n_in: int) -> np.ndarray:
        """W^(l+1) evaluated at the nodes of an n_out x n_in layer (0-based l)."""
        g = self.layers[l]
        if isinstance(g, StepGraphon):
            return expand(g, n_out, n_in)
        u = (np.arange(n_out) + 0.5) / n_out
        v = (np.arange(n_in) + 0.5) / n_in
        w = np.asarray(g(u[:, None], v[None, :]), dtype=np.float64)
        w = np.broadcast_to(w, (n_out, n_in)).copy()
        if w.min() < 0 or w.max() > 1:
            raise DomainError("graphon values must lie in [0, 1]")
        return w

    def check_grid(self, grid: int) -> None:
        for l, g in enumerate(self.layers):
            if isinstance(g, StepGraphon) and (grid < g.k or grid % g.k):
                raise ConfigurationError(f"grid R={grid} must be a multiple of K={g.k} (layer {l + 1})")


@dataclass
class CovField:
    """Per-position covariances of one hidden layer for an input pair."""

    sxx: np.ndarray       # pre-activation Sigma~(u; x, x)
    sxy: np.ndarray
    syy: np.ndarray
    act_xx: np.ndarray    # activation Sigma(u; ., .)
    act_xy: np.ndarray
    act_yy: np.ndarray
    dot_xy: np.ndarray    # derivative Sigma-dot(u; x, x')
    clamped: int = 0


def _matrices(stack: GraphonStack, d: int, grid: int):
    L = stack.depth
    mats = [stack.values(0, grid, d)]
    for l in range(1, L + 1):
        mats.append(stack.values(l, grid, grid))
    return mats


def _self_fields(mats, x, d, grid):
    """Sigma~(u; x, x) per layer for every row of x: list of (B, R)."""
    s = (x * x) @ mats[0].T / d
    out = [s]
    for w in mats[1:-1]:
        act, _ = relu_gauss_moments(s, s, s)
        s = act @ w.T / grid
        out.append(s)
    return out


def _check_finite(arr, what, layer):
    if not np.all(np.isfinite(arr)):
        pos = np.argwhere(~np.isfinite(arr))[0]
        raise NumericError(f"non-finite {what} at layer {layer}, position {int(pos[-1])}")


def _pair_kernel(mats, x, selfs, a, b, d, grid, include_param_graphon):
    L = len(mats) - 1
    prod = x[a] * x[b]
    s0 = prod.sum(axis=1) / d
    tilde = prod @ mats[0].T / d
    tildes, dots, means = [tilde], [], [s0]
    diag = a == b
    for l in range(L):
        # rho = 1 exactly on the diagonal; arccos would turn 1-ulp summation
        # differences there into ~1e-8 errors
        tilde[diag] = selfs[l][a[diag]]
        act, dot = relu_gauss_moments(selfs[l][a], tilde, selfs[l][b])
        _check_finite(act, "activation covariance", l + 1)
        dots.append(dot)
        means.append(act.mean(axis=1))
        tilde = act @ mats[l + 1].T / grid
        tildes.append(tilde)
    if include_param_graphon:
        theta = tildes[L].mean(axis=1)
    else:
        theta = means[L].copy()
    g = np.ones_like(tildes[L])
    for l in range(L, 0, -1):
        g = dots[l - 1] * (g @ mats[l] / grid)
        if include_param_graphon:
            theta += (g * tildes[l - 1]).mean(axis=1)
        else:
            theta += g.mean(axis=1) * means[l - 1]
    return theta


def forward_cov(stack: GraphonStack, x, x_prime, grid: int = DEFAULT_GRID) -> list[CovField]:
    """Hidden-layer covariance fields for one input pair."""
    stack.check_grid(grid)
    xs = np.stack([np.asarray(x, float), np.asarray(x_prime, float)])
    if not np.all(np.isfinite(xs)):
        raise DomainError("inputs must be finite")
    d = xs.shape[1]
    mats = _matrices(stack, d, grid)
    selfs = _self_fields(mats, xs, d, grid)
    out = []
    tilde = (xs[0] * xs[1]) @ mats[0].T / d
    for l in range(stack.depth):
        sxx, syy = selfs[l][0], selfs[l][1]
        act, dot = relu_gauss_moments(sxx, tilde, syy)
        axx, _ = relu_gauss_moments(sxx, sxx, sxx)
        ayy, _ = relu_gauss_moments(syy, syy, syy)
        out.append(CovField(sxx.copy(), tilde.copy(), syy.copy(), axx, act, ayy, dot))
        tilde = act @ mats[l + 1].T / grid
    return out


def graphon_ntk(stack: GraphonStack, inputs, grid: int = DEFAULT_GRID,
                include_param_graphon: bool = False, chunk: int | None = None) -> KernelMatrix:
    """Analytic infinite-width kernel of a graphon-structured ReLU network.

    With ``include_param_graphon`` the layer-l term integrates the backward
    field against Sigma~^(l) (the masked-parameter reading) instead of
    against the plain mean of Sigma^(l-1).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("inputs must be B x d")
    if not np.all(np.isfinite(x)):
        raise DomainError("inputs must be finite")
    stack.check_grid(grid)
    b, d = x.shape
    mats = _matrices(stack, d, grid)
    selfs = _self_fields(mats, x, d, grid)
    ia, ib = np.triu_indices(b)
    chunk = chunk or max(1, 2_000_000 // max(grid, 1))
    vals = np.empty(ia.size)
    for s in range(0, ia.size, chunk):
        sl = slice(s, s + chunk)
        vals[sl] = _pair_kernel(mats, x, selfs, ia[sl], ib[sl], d, grid, include_param_graphon)
    out = np.empty((b, b))
    out[ia, ib] = vals
    out[ib, ia] = vals
    return KernelMatrix(out, fingerprint(x), "analytic")


def constant_ntk(c: float, depth: int, inputs) -> KernelMatrix:
    """c^L times the dense ReLU NTK (every layer, output included, at density c)."""
    if not 0.0 < c <= 1.0:
        raise DomainError(f"constant graphon value must lie in (0, 1], got {c}")
    base = graphon_ntk(GraphonStack.constant(1.0, depth, k=1), inputs, grid=1)
    return KernelMatrix(base.values * c ** depth, base.fingerprint, "constant-closed-form")


# --------------------------------------------------------------------------
# empirical kernels
# --------------------------------------------------------------------------

def _masked_layer_term(delta, h, mask, n_in, chunk=None):
    """sum over kept (i, j) of delta_ai h_aj delta_bi h_bj / n_in, for all (a, b).

    Builds the per-weight gradient rows of the kept positions in column
    chunks and accumulates their Gram matrix.
    """
    rows, cols = np.nonzero(mask)
    b = delta.shape[0]
    chunk = chunk or max(1, (1 << 22) // max(b, 1))
    out = np.zeros((b, b))
    for s in range(0, rows.size, chunk):
        g = delta[:, rows[s:s + chunk]] * h[:, cols[s:s + chunk]]
        out += g @ g.T
    return out / n_in


def empirical_ntk(net: MaskedMlp, inputs, include_pruned_params: bool = False) -> KernelMatrix:
    """Gram matrix of output gradients over the network's weights.

    By default only kept weights count; ``include_pruned_params`` adds the
    pruned positions too (the gradient such a weight would have at value 0).
    """
    if net.widths[-1] != 1:
        raise ConfigurationError("empirical NTK needs a single-output head")
    x = np.asarray(inputs, dtype=np.float64)
    cache = forward(net, x)
    deltas = backprop_deltas(net, cache, np.ones((len(x), 1)))
    theta = np.zeros((len(x), len(x)))
    for l, (delta, h) in enumerate(zip(deltas, cache.post)):
        n_in = h.shape[1]
        m = net.mask.layers[l]
        if include_pruned_params or m.all():
            theta += (delta @ delta.T) * (h @ h.T) / n_in
        else:
            theta += _masked_layer_term(delta, h, m, n_in)
    theta = 0.5 * (theta + theta.T)
    return KernelMatrix(theta, fingerprint(x), "empirical")


def realize(widths, stack: GraphonStack, rng: Rng, realization: str = "mask") -> MaskedMlp:
    """One finite network drawn from a graphon stack.

    ``mask``: Bernoulli(W) masks with unit-variance kept weights.
    ``variance``: dense network with weight variances W(i/n, j/n).
    """
    widths = [int(w) for w in widths]
    if len(widths) - 1 != len(stack.layers):
        raise ShapeError("stack depth does not match widths")
    if realization == "mask":
        layers = [sample_mask(g, widths[l + 1], widths[l], rng=rng.spawn(0, l))
                  if isinstance(g, StepGraphon)
                  else rng.spawn(0, l).uniform((widths[l + 1], widths[l])) < stack.values(l, widths[l + 1], widths[l])
                  for l, g in enumerate(stack.layers)]
        mask = Mask(layers, [True] * len(layers), 0.0)
        return init(widths, mask, 1.0, rng.spawn(1))
    if realization == "variance":
        var = [stack.values(l, widths[l + 1], widths[l]) for l in range(len(stack.layers))]
        return init(widths, Mask.dense(widths), 1.0, rng.spawn(1), variances=var)
    raise DomainError(f"unknown realization {realization!r}")


def mc_empirical_ntk(widths, mask_or_graphon, inputs, n_inits: int, rng: Rng,
                     include_pruned_params: bool = False, realization: str = "mask") -> KernelMatrix:
    """Average of :func:`empirical_ntk` over independent initializations.

    A fixed :class:`Mask` is reused for every draw; a :class:`GraphonStack`
    gives a fresh network (mask and weights) per draw.
    """
    if n_inits < 1:
        raise DomainError("n_inits must be >= 1")
    x = np.asarray(inputs, dtype=np.float64)
    acc = np.zeros((len(x), len(x)))
    for i in range(n_inits):
        r = rng.spawn(i)
        if isinstance(mask_or_graphon, Mask):
            net = init(widths, mask_or_graphon, 1.0, r)
        elif isinstance(mask_or_graphon, GraphonStack):
            net = realize(widths, mask_or_graphon, r, realization)
        else:
            raise ConfigurationError("expected a Mask or a GraphonStack")
        acc += empirical_ntk(net, x, include_pruned_params).values
    return KernelMatrix(acc / n_inits, fingerprint(x), "empirical")


def lindeberg_share(net: MaskedMlp, inputs) -> list[float]:
    """Largest single-term share of each pre-activation's sum of squares, per layer.

    Informational only: small values mean no single weight-activation product
    dominates a pre-activation.
    """
    cache = forward(net, np.asarray(inputs, dtype=np.float64))
    out = []
    for w, h in zip(net.weights, cache.post):
        terms = (w[None, :, :] * h[:, None, :]) ** 2
        tot = terms.sum(axis=2)
        share = np.divide(terms.max(axis=2), tot, out=np.zeros_like(tot), where=tot > 0)
        out.append(float(share.max()))
    return out
