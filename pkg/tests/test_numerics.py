import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from gplab.errors import DomainError, InsufficientDataError, InvalidInputError, SymmetryError
from gplab.numerics import Rng, bernoulli, gaussian, powerlaw_fit, sym_eigvals


def test_same_seed_same_stream():
    a, b = Rng(42), Rng(42)
    assert a.uniform(1000).tobytes() == b.uniform(1000).tobytes()
    assert a.normal(50).tobytes() == b.normal(50).tobytes()


def test_spawned_streams_differ_and_are_reproducible():
    r = Rng(3)
    assert not np.array_equal(r.spawn(0).uniform(10), r.spawn(1).uniform(10))
    assert np.array_equal(r.spawn(5, 2).uniform(10), Rng(3).spawn(5, 2).uniform(10))


def test_bernoulli_degenerate_probabilities():
    r = Rng(0)
    assert bernoulli(r, 0.0, 10_000).sum() == 0
    assert bernoulli(r, 1.0, 10_000).sum() == 10_000


def test_gaussian_zero_variance_returns_mean():
    assert gaussian(Rng(1), 2.5, 0.0) == 2.5


def test_gaussian_negative_variance():
    with pytest.raises(DomainError):
        gaussian(Rng(1), 0.0, -1.0)


def test_bernoulli_bad_probability():
    with pytest.raises(DomainError):
        bernoulli(Rng(1), 1.5)


def test_gaussian_mean_clt_bound():
    # sd of the mean of 1e6 standard normals is 1e-3; 0.01 is 10 sigma
    z = gaussian(Rng(7), 0.0, 1.0, 1_000_000)
    assert abs(z.mean()) < 0.01


def test_uniformity_chi_squared_across_seeds():
    for seed in (1, 2, 3):
        u = Rng(seed).uniform(100_000)
        counts = np.histogram(u, bins=20, range=(0, 1))[0]
        assert chisquare(counts).pvalue > 0.01


def test_eigvals_identity_and_2x2():
    assert np.allclose(sym_eigvals(np.eye(3)).values, [1, 1, 1])
    assert np.allclose(sym_eigvals([[2.0, 1.0], [1.0, 2.0]]).values, [3, 1], atol=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_eigvals_2x2_quadratic_oracle(a, b, c):
    m = np.array([[a, b], [b, c]])
    disc = math.sqrt(((a - c) / 2) ** 2 + b * b)
    expect = [(a + c) / 2 + disc, (a + c) / 2 - disc]
    got = sym_eigvals(m, floor=0.0).raw
    assert np.allclose(got, expect, atol=1e-12 * max(1.0, abs(a), abs(b), abs(c)))


@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_eigvals_match_lapack_and_reconstruct(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n))
    a = a + a.T
    spec = sym_eigvals(a, vectors=True, floor=0.0)
    ref = np.sort(np.linalg.eigvalsh(a))[::-1]
    scale = max(1.0, np.abs(ref).max())
    assert np.allclose(spec.raw, ref, atol=1e-10 * scale)
    q = spec.vectors
    rec = q @ np.diag(spec.raw) @ q.T
    assert np.linalg.norm(rec - a) <= 1e-8 * np.linalg.norm(a) + 1e-300
    assert abs(spec.raw.sum() - np.trace(a)) <= 1e-8 * max(1.0, np.abs(a).sum())


def test_eigvals_floor_clamps_tiny_values():
    v = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))[0]
    a = v @ np.diag([1.0, 0.5, 1e-14, -1e-15]) @ v.T
    spec = sym_eigvals(0.5 * (a + a.T))
    assert spec.values[2] == 0.0 and spec.values[3] == 0.0
    assert np.all(np.diff(spec.values) <= 0)


def test_eigvals_errors():
    with pytest.raises(SymmetryError):
        sym_eigvals([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        sym_eigvals([[np.nan, 0.0], [0.0, 1.0]])


def test_powerlaw_exact_and_flat():
    k = np.arange(1, 51, dtype=float)
    assert abs(powerlaw_fit(k ** -2.0, 1, 50) - 2.0) < 1e-10
    assert abs(powerlaw_fit(np.full(50, 5.0), 1, 50)) < 1e-10


def test_powerlaw_noisy_against_ols_oracle():
    k = np.arange(1, 101, dtype=float)
    lam = k ** -1.5 * (1 + 0.01 * np.random.default_rng(0).normal(size=100))
    slope = np.polyfit(np.log(k[1:50]), np.log(lam[1:50]), 1)[0]
    got = powerlaw_fit(lam)
    assert abs(got + slope) < 1e-10
    assert abs(got - 1.5) < 0.05


@given(arrays(np.float64, st.integers(8, 60), elements=st.floats(1e-3, 1e3)), st.floats(1e-6, 1e6))
def test_powerlaw_scale_invariant(vals, c):
    vals = np.sort(vals)[::-1]
    assert math.isclose(powerlaw_fit(c * vals), powerlaw_fit(vals), rel_tol=1e-8, abs_tol=1e-8)


def test_powerlaw_errors():
    with pytest.raises(InsufficientDataError):
        powerlaw_fit([3.0, 2.0, 1.0], 2, 3)
    with pytest.raises(DomainError):
        powerlaw_fit([3.0, 2.0, 0.0, 0.0], 1, 4)
