"""The numba kernels and their numpy fallbacks must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gplab import _accel, _kernels


@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_jacobi_paths_agree(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n))
    a = a + a.T
    w1 = np.sort(_kernels.jacobi_eigh_nb(a.copy(), 1e-14, 60)[0])
    w2 = np.sort(_kernels.jacobi_eigh_np(a.copy(), 1e-14, 60)[0])
    assert np.allclose(w1, w2, atol=1e-11 * max(1.0, np.abs(a).max()))


def test_jacobi_eigenvectors_orthonormal():
    a = np.random.default_rng(1).normal(size=(12, 12))
    a = a + a.T
    for fn in (_kernels.jacobi_eigh_nb, _kernels.jacobi_eigh_np):
        w, v, _ = fn(a.copy(), 1e-14, 60)
        assert np.allclose(v.T @ v, np.eye(12), atol=1e-12)
        assert np.allclose(a @ v, v * w, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_relu_moment_paths_agree(seed):
    g = np.random.default_rng(seed)
    sxx, syy = g.uniform(0, 3, 50), g.uniform(0, 3, 50)
    sxy = g.uniform(-1, 1, 50) * np.sqrt(sxx * syy)
    a1, d1, w1 = _kernels.relu_moments_nb(sxx, sxy, syy)
    a2, d2, w2 = _kernels.relu_moments_np(sxx, sxy, syy)
    assert np.allclose(a1, a2, rtol=1e-13, atol=1e-15)
    assert np.allclose(d1, d2, rtol=1e-13, atol=1e-15)


def test_block_density_paths_agree():
    m = np.random.default_rng(0).random((37, 53)) < 0.3
    re, ce = np.array([0, 10, 20, 37]), np.array([0, 5, 30, 53])
    a = _kernels.block_density_nb(m, re, ce)
    b = _kernels.block_density_np(m, re, ce)
    assert np.array_equal(a, b)
    assert a[0, 0] == m[:10, :5].mean()


def test_env_flag_selects_numpy_path():
    env = dict(os.environ, GPLAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import gplab; print(gplab.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_default_backend_is_numba():
    if not _accel.DISABLED:
        assert _accel.backend() == "numba"
