"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public entry points (``jacobi_eigh``, ``relu_moments``, ``block_density``)
dispatch on :data:`gplab._accel.USE_NUMBA`. Both implementations are importable
directly (``*_nb`` / ``*_np``) so tests and the benchmark can compare them.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# cyclic Jacobi eigensolver
# --------------------------------------------------------------------------

@njit
def jacobi_eigh_nb(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    fro = math.sqrt(fro)
    sweeps = 0
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if math.sqrt(2.0 * off) <= tol * fro:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def _round_robin(n):
    """Disjoint (p, q) pairings covering every pair once over n-1 rounds."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            arr = np.array(pairs, dtype=np.int64)
            rounds.append((arr[:, 0], arr[:, 1]))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh_np(a, tol, max_sweeps):
    # Parallel-ordered Jacobi: each round applies n/2 disjoint rotations at once.
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    fro = np.linalg.norm(a)
    rounds = _round_robin(n)
    iu = np.triu_indices(n, 1)
    sweeps = 0
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(a[iu] ** 2)))
        if off <= tol * fro:
            break
        sweeps += 1
        for P, Q in rounds:
            apq = a[P, Q]
            live = apq != 0.0
            if not live.any():
                continue
            P, Q, apq = P[live], Q[live], apq[live]
            theta = (a[Q, Q] - a[P, P]) / (2.0 * apq)
            sgn = np.where(theta >= 0.0, 1.0, -1.0)
            t = sgn / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, P], a[:, Q]
            a[:, P] = c * ap - s * aq
            a[:, Q] = s * ap + c * aq
            ap, aq = a[P, :], a[Q, :]
            a[P, :] = c[:, None] * ap - s[:, None] * aq
            a[Q, :] = s[:, None] * ap + c[:, None] * aq
            a[P, Q] = 0.0
            a[Q, P] = 0.0
            vp, vq = v[:, P], v[:, Q]
            v[:, P] = c * vp - s * vq
            v[:, Q] = s * vp + c * vq
    return np.diag(a).copy(), v, sweeps


def jacobi_eigh(a, tol=1e-14, max_sweeps=60):
    """Eigenvalues and eigenvectors of a symmetric matrix, unsorted."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.shape[0] == 0:
        return np.empty(0), np.empty((0, 0)), 0
    if _accel.USE_NUMBA:
        return jacobi_eigh_nb(a, tol, max_sweeps)
    return jacobi_eigh_np(a, tol, max_sweeps)


# --------------------------------------------------------------------------
# ReLU Gaussian moments (arc-cosine closed form)
# --------------------------------------------------------------------------

@njit
def relu_moments_nb(sxx, sxy, syy):
    n = sxx.shape[0]
    act = np.empty(n)
    dot = np.empty(n)
    worst = 0.0
    for i in range(n):
        prod = sxx[i] * syy[i]
        if prod <= 0.0:
            act[i] = 0.0
            dot[i] = 0.0
            continue
        root = math.sqrt(prod)
        rho = sxy[i] / root
        excess = abs(rho) - 1.0
        if excess > worst:
            worst = excess
        if rho > 1.0:
            rho = 1.0
        elif rho < -1.0:
            rho = -1.0
        theta = math.acos(rho)
        act[i] = root * (math.sin(theta) + (math.pi - theta) * rho) / TWO_PI
        dot[i] = (math.pi - theta) / TWO_PI
    return act, dot, worst


def relu_moments_np(sxx, sxy, syy):
    prod = sxx * syy
    ok = prod > 0.0
    root = np.sqrt(np.where(ok, prod, 1.0))
    rho = np.where(ok, sxy / root, 0.0)
    worst = float(max(0.0, np.max(np.abs(rho), initial=0.0) - 1.0))
    rho = np.clip(rho, -1.0, 1.0)
    theta = np.arccos(rho)
    act = np.where(ok, root * (np.sin(theta) + (np.pi - theta) * rho) / TWO_PI, 0.0)
    dot = np.where(ok, (np.pi - theta) / TWO_PI, 0.0)
    return act, dot, worst


def relu_moments(sxx, sxy, syy):
    """Elementwise (E[relu z relu z'], E[step z step z']) over flat arrays."""
    sxx = np.ascontiguousarray(sxx, dtype=np.float64).ravel()
    sxy = np.ascontiguousarray(sxy, dtype=np.float64).ravel()
    syy = np.ascontiguousarray(syy, dtype=np.float64).ravel()
    if _accel.USE_NUMBA:
        return relu_moments_nb(sxx, sxy, syy)
    return relu_moments_np(sxx, sxy, syy)


# --------------------------------------------------------------------------
# block edge density of a (sorted) binary matrix
# --------------------------------------------------------------------------

@njit
def block_density_nb(mask, row_edges, col_edges):
    kr = row_edges.shape[0] - 1
    kc = col_edges.shape[0] - 1
    n_in = mask.shape[1]
    col_block = np.empty(n_in, dtype=np.int64)
    for b in range(kc):
        for j in range(col_edges[b], col_edges[b + 1]):
            col_block[j] = b
    sums = np.zeros((kr, kc))
    for a in range(kr):
        for i in range(row_edges[a], row_edges[a + 1]):
            for j in range(n_in):
                if mask[i, j]:
                    sums[a, col_block[j]] += 1.0
    for a in range(kr):
        rows = row_edges[a + 1] - row_edges[a]
        for b in range(kc):
            sums[a, b] /= rows * (col_edges[b + 1] - col_edges[b])
    return sums


def block_density_np(mask, row_edges, col_edges):
    m = mask.astype(np.int64)
    sums = np.add.reduceat(np.add.reduceat(m, row_edges[:-1], axis=0), col_edges[:-1], axis=1)
    area = np.outer(np.diff(row_edges), np.diff(col_edges))
    return sums / area


def block_density(mask, row_edges, col_edges):
    """Mean of ``mask`` over the blocks cut by ``row_edges`` x ``col_edges``."""
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    row_edges = np.ascontiguousarray(row_edges, dtype=np.int64)
    col_edges = np.ascontiguousarray(col_edges, dtype=np.int64)
    if _accel.USE_NUMBA:
        return block_density_nb(mask, row_edges, col_edges)
    return block_density_np(mask, row_edges, col_edges)
