"""Random streams, symmetric eigenvalues and power-law fitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, InsufficientDataError, InvalidInputError, SymmetryError

DEFAULT_FLOOR = 1e-12


class Rng:
    """Counter-based (Philox) random stream identified by ``(seed, stream)``.

    Child streams are derived from the path of stream ids, so per-trial
    generators can be created in any order.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *stream_id: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(stream_id))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def gaussian(self, mean=0.0, variance=1.0, size=None):
        return gaussian(self, mean, variance, size)

    def bernoulli(self, p, size=None):
        return bernoulli(self, p, size)

    def choice(self, n, size, replace=False):
        return self.generator.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self.generator.permutation(n)


def gaussian(rng: Rng, mean=0.0, variance=1.0, size=None):
    """Draw from N(mean, variance); ``variance`` may be an array (broadcast)."""
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance < 0) or not np.all(np.isfinite(variance)):
        raise DomainError("variance must be finite and non-negative")
    if size is None and variance.ndim:
        size = variance.shape
    z = rng.normal(size)
    out = mean + np.sqrt(variance) * z
    if size is None:
        return float(out)
    return out


def bernoulli(rng: Rng, p, size=None):
    """Draw 0/1 with P(1) = p; p = 0 and p = 1 are exact."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise DomainError("probability must lie in [0, 1]")
    if size is None and p.ndim:
        size = p.shape
    u = rng.uniform(size)
    out = u < p
    if size is None:
        return int(out)
    return out.astype(np.uint8)


@dataclass
class Spectrum:
    """Eigenvalues sorted descending; ``values`` are floored, ``raw`` are not."""

    values: np.ndarray
    raw: np.ndarray
    vectors: np.ndarray | None = None
    floor: float = DEFAULT_FLOOR
    sweeps: int = field(default=0, repr=False)

    def __len__(self):
        return len(self.values)


def sym_eigvals(matrix, vectors: bool = False, floor: float = DEFAULT_FLOOR,
                symmetry_tol: float = 1e-10) -> Spectrum:
    """All eigenvalues of a real symmetric matrix via cyclic Jacobi rotations.

    Values below ``floor * lambda_1`` are clamped to zero in ``values``.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T), initial=0.0)
    if asym > symmetry_tol:
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    if floor < 0:
        raise DomainError("floor must be >= 0")
    a = 0.5 * (a + a.T)
    w, v, sweeps = _kernels.jacobi_eigh(a)
    order = np.argsort(-w, kind="stable")
    raw = w[order]
    top = raw[0] if raw.size else 0.0
    values = raw.copy()
    values[values < floor * max(top, 0.0)] = 0.0
    return Spectrum(values=values, raw=raw, vectors=v[:, order] if vectors else None,
                    floor=floor, sweeps=sweeps)


def default_fit_range(n: int) -> tuple[int, int]:
    """Index range [2, n/2] (1-based, inclusive) used for the decay fit."""
    return 2, max(2, n // 2)


def powerlaw_fit(values, k_min: int | None = None, k_max: int | None = None) -> float:
    """Decay exponent alpha of ``values[k] ~ k**-alpha`` by log-log least squares.

    ``k_min`` and ``k_max`` are 1-based and inclusive.
    """
    values = np.asarray(values, dtype=np.float64)
    d_min, d_max = default_fit_range(len(values))
    k_min = d_min if k_min is None else int(k_min)
    k_max = d_max if k_max is None else int(k_max)
    if k_min < 1 or k_max > len(values):
        raise DomainError(f"fit range [{k_min}, {k_max}] outside 1..{len(values)}")
    if k_max - k_min + 1 < 3:
        raise InsufficientDataError(f"fit range [{k_min}, {k_max}] has fewer than 3 points")
    y = values[k_min - 1:k_max]
    if np.any(~(y > 0)):
        raise DomainError("power-law fit needs strictly positive values in range")
    x = np.log(np.arange(k_min, k_max + 1, dtype=np.float64))
    y = np.log(y)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return -slope
