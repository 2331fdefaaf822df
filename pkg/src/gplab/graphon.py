"""Step graphons: degree-sorted histogram estimation, distances, sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, InfeasibleError, ResolutionError, ShapeError
from .numerics import Rng

DEFAULT_K = 64


@dataclass
class StepGraphon:
    """K x K piecewise-constant bipartite graphon (rows: layer l, cols: layer l-1)."""

    grid: np.ndarray
    provenance: str = "specified"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise ShapeError(f"graphon grid must be K x K, got {g.shape}")
        if not np.all(np.isfinite(g)) or g.min() < 0.0 or g.max() > 1.0:
            raise DomainError("graphon values must lie in [0, 1]")
        self.grid = g

    @property
    def k(self) -> int:
        return self.grid.shape[0]

    @classmethod
    def constant(cls, c: float, k: int = DEFAULT_K) -> "StepGraphon":
        return cls(np.full((k, k), float(c)), "constant")

    @classmethod
    def from_function(cls, fn, k: int = DEFAULT_K) -> "StepGraphon":
        """Sample ``fn(u, v)`` at cell midpoints."""
        mid = (np.arange(k) + 0.5) / k
        return cls(np.clip(fn(mid[:, None], mid[None, :]), 0.0, 1.0), "specified")

    def is_constant(self) -> bool:
        return bool(np.all(self.grid == self.grid.flat[0]))

    def mean(self) -> float:
        return float(self.grid.mean())

    def __eq__(self, other):
        if not isinstance(other, StepGraphon):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.grid, other.grid)


def partition_edges(n: int, k: int) -> np.ndarray:
    """Boundaries of k near-equal intervals over n items, larger intervals first."""
    if k < 1 or n < k:
        raise ResolutionError(f"cannot split {n} nodes into {k} intervals")
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def cell_index(n: int, k: int) -> np.ndarray:
    """Cell of every node under :func:`partition_edges`."""
    edges = partition_edges(n, k)
    return np.repeat(np.arange(k), np.diff(edges))


@dataclass
class DegreeOrder:
    rows: np.ndarray
    cols: np.ndarray


def degree_order(mask) -> DegreeOrder:
    """Rows by out-degree and columns by in-degree, descending; ties by index."""
    m = np.asarray(mask)
    rows = np.argsort(-m.sum(axis=1, dtype=np.int64), kind="stable")
    cols = np.argsort(-m.sum(axis=0, dtype=np.int64), kind="stable")
    return DegreeOrder(rows, cols)


def block_average(mask, k: int = DEFAULT_K, provenance: str = "sampled") -> StepGraphon:
    """Cell densities of ``mask`` in its given node order (no sorting)."""
    m = np.asarray(mask)
    if m.dtype != bool and not np.isin(m, (0, 1)).all():
        raise DomainError("block_average expects a binary mask")
    n_out, n_in = m.shape
    grid = _kernels.block_density(m, partition_edges(n_out, k), partition_edges(n_in, k))
    return StepGraphon(grid, provenance)


def estimate_sas(mask, k: int = DEFAULT_K) -> StepGraphon:
    """Sort-and-smooth histogram: degree-sort both sides, then average per cell."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError("mask layer must be a matrix")
    n_out, n_in = m.shape
    if k < 1 or n_out < k or n_in < k:
        raise ResolutionError(f"mask {m.shape} is smaller than the {k} x {k} grid")
    order = degree_order(m)
    sorted_mask = m[order.rows][:, order.cols]
    return block_average(sorted_mask, k, "estimated")


def average_histograms(grids) -> StepGraphon:
    grids = list(grids)
    if not grids:
        raise ShapeError("need at least one histogram")
    k = grids[0].k
    if any(g.k != k for g in grids):
        raise ShapeError("histograms have different resolutions")
    acc = np.zeros((k, k))
    for g in grids:
        acc += g.grid
    return StepGraphon(np.clip(acc / len(grids), 0.0, 1.0), grids[0].provenance)


def euclid_distance(g1: StepGraphon, g2: StepGraphon) -> float:
    """Unnormalised Frobenius distance between two grids."""
    if g1.k != g2.k:
        raise ShapeError(f"resolution mismatch: {g1.k} vs {g2.k}")
    return float(np.sqrt(np.sum((g1.grid - g2.grid) ** 2)))


def rescale(grid, density: float, passes: int = 10) -> np.ndarray:
    """Scale ``grid`` to the given mean, clamping at 1 and redistributing the excess."""
    g = np.asarray(grid, dtype=np.float64)
    mean = g.mean()
    if density == 0.0:
        return np.zeros_like(g)
    if mean <= 0.0:
        raise InfeasibleError("graphon has zero mass; cannot reach a positive density")
    if density > 1.0:
        raise InfeasibleError("density above 1")
    target = density * g.size
    out = g * (density / mean)
    for _ in range(passes):
        over = out >= 1.0
        out[over] = 1.0
        free = ~over & (out > 0)
        need = target - over.sum()
        have = out[free].sum()
        if have <= 0 or abs(have - need) <= 1e-12 * target:
            break
        out[free] *= need / have
    return np.clip(out, 0.0, 1.0)


def expand(graphon: StepGraphon, n_out: int, n_in: int) -> np.ndarray:
    """Per-entry probabilities of an n_out x n_in mask drawn from ``graphon``."""
    k = graphon.k
    if n_out < k or n_in < k:
        # small layers: map node i to the cell containing its midpoint
        r = np.minimum(((np.arange(n_out) + 0.5) * k / n_out).astype(int), k - 1)
        c = np.minimum(((np.arange(n_in) + 0.5) * k / n_in).astype(int), k - 1)
    else:
        r, c = cell_index(n_out, k), cell_index(n_in, k)
    return graphon.grid[np.ix_(r, c)]


def sample_mask(graphon: StepGraphon, n_out: int, n_in: int, target_sparsity: float | None = None,
                calibration: str = "none", rng: Rng | None = None) -> np.ndarray:
    """Bernoulli mask with entry (i, j) drawn from the cell containing it."""
    rng = rng or Rng(0)
    grid = graphon.grid
    if calibration == "rescale":
        if target_sparsity is None or not 0.0 <= target_sparsity < 1.0:
            raise DomainError("rescale calibration needs a target sparsity in [0, 1)")
        grid = rescale(grid, 1.0 - target_sparsity)
    elif calibration != "none":
        raise DomainError(f"unknown calibration {calibration!r}")
    probs = expand(StepGraphon(grid), n_out, n_in)
    return rng.uniform(probs.shape) < probs


def hidden_layers(mask) -> list[int]:
    """Indices of hidden-to-hidden layers (input and output layers excluded)."""
    return list(range(1, len(mask.layers) - 1))


def convergence_curve(method: str, widths, sparsity: float, trials: int, rng: Rng,
                      depth: int = 4, k: int = DEFAULT_K, input_dim: int = 784, n_classes: int = 10,
                      source=None, batch_size: int = 128, rounds: int = 100, per_layer: bool = False,
                      histograms: dict | None = None):
    """Distance of each width's trial-averaged histogram to the widest one.

    Returns ``{layer: [(width, distance), ...]}`` for every hidden-to-hidden
    layer. When ``histograms`` is a dict it is filled with the averaged
    :class:`StepGraphon` per ``(width, layer)``.
    """
    from .experiments import distance_curves, width_histograms

    widths = sorted(int(w) for w in widths)
    if trials < 1:
        raise DomainError("trials must be >= 1")
    avg = {}
    for w in widths:
        for l, g in width_histograms(method, w, sparsity, trials, rng, depth, k, input_dim, n_classes,
                                     source, batch_size, rounds, per_layer).items():
            avg[(w, l)] = g
    if histograms is not None:
        histograms.update(avg)
    return distance_curves(avg)
