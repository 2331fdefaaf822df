"""Pruning-at-initialization scores and mask selection.

All methods rank weights globally across the prunable layers by default.
``sparsity`` is always the fraction of prunable weights removed.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, DomainError, StructuralError
from .net import Mask, MaskedMlp, batch_loss, kept_count
from .numerics import Rng

log = logging.getLogger(__name__)

METHODS = ("random", "magnitude", "snip", "grasp", "synflow")


@dataclass
class ScoreSet:
    layers: list[np.ndarray]
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown pruning method {self.method!r}")
        for s in self.layers:
            if not np.all(np.isfinite(s)):
                raise DomainError("scores must be finite")


def score_random(net: MaskedMlp, rng: Rng) -> ScoreSet:
    return ScoreSet([rng.spawn(l).uniform(w.shape) for l, w in enumerate(net.weights)], "random")


def score_magnitude(net: MaskedMlp) -> ScoreSet:
    return ScoreSet([np.abs(w) for w in net.weights], "magnitude")


def score_snip(net: MaskedMlp, batch, loss: str = "ce") -> ScoreSet:
    """|dL/dW * W| on one batch."""
    _, _, grads = batch_loss(net, batch.inputs, batch.labels, loss)
    return ScoreSet([np.abs(g * w) for g, w in zip(grads, net.weights)], "snip")


def fd_hessian_vector(grad_fn, theta, direction, eps):
    """(grad(theta + eps v) - grad(theta - eps v)) / (2 eps) for flat arrays."""
    gp = grad_fn(theta + eps * direction)
    gm = grad_fn(theta - eps * direction)
    return (gp - gm) / (2.0 * eps)


def fd_epsilon(theta_norm, grad_norm, scale):
    eps = scale * (1.0 + theta_norm) / (1.0 + grad_norm)
    if not math.isfinite(eps) or eps <= 0.0 or (grad_norm > 0 and eps * grad_norm == 0.0):
        raise ConditioningError(f"finite-difference step underflows (eps={eps!r}, |g|={grad_norm!r})")
    return eps


def score_grasp(net: MaskedMlp, batch, fd_epsilon_scale: float = 1e-3, loss: str = "ce") -> ScoreSet:
    """-W * (H g) with the Hessian-gradient product from central differences.

    The network's weights are restored bit-exactly before returning.
    """
    _, _, g = batch_loss(net, batch.inputs, batch.labels, loss)
    theta_norm = math.sqrt(sum(float(np.sum(w * w)) for w in net.weights))
    grad_norm = math.sqrt(sum(float(np.sum(x * x)) for x in g))
    if grad_norm == 0.0:
        return ScoreSet([np.zeros_like(w) for w in net.weights], "grasp")
    eps = fd_epsilon(theta_norm, grad_norm, fd_epsilon_scale)
    saved = [w.copy() for w in net.weights]
    try:
        for w, s, d in zip(net.weights, saved, g):
            np.add(s, eps * d, out=w)
        _, _, gp = batch_loss(net, batch.inputs, batch.labels, loss)
        for w, s, d in zip(net.weights, saved, g):
            np.subtract(s, eps * d, out=w)
        _, _, gm = batch_loss(net, batch.inputs, batch.labels, loss)
    finally:
        for w, s in zip(net.weights, saved):
            w[...] = s
    hg = [(a - b) / (2.0 * eps) for a, b in zip(gp, gm)]
    return ScoreSet([-w * h for w, h in zip(net.weights, hg)], "grasp")


def select_top(flat, k: int, allowed=None) -> np.ndarray:
    """Boolean keep-vector of the k largest entries; ties keep the lowest index.

    With ``allowed`` only those positions compete (and at most all of them
    are kept).
    """
    flat = np.asarray(flat, dtype=np.float64)
    keep = np.zeros(flat.size, dtype=bool)
    cand = np.arange(flat.size) if allowed is None else np.flatnonzero(allowed)
    if k <= 0 or cand.size == 0:
        return keep
    if k >= cand.size:
        keep[cand] = True
        return keep
    vals = flat[cand]
    n = vals.size
    thr = np.partition(vals, n - k)[n - k]
    above = vals > thr
    keep[cand[above]] = True
    need = k - int(above.sum())
    if need > 0:
        keep[cand[np.flatnonzero(vals == thr)[:need]]] = True
    return keep


def _check_sparsity(sparsity):
    if not 0.0 <= sparsity < 1.0:
        raise DomainError(f"sparsity must lie in [0, 1), got {sparsity}")


def global_mask(scores: ScoreSet | list, sparsity: float, prunable=None,
                per_layer: bool = False, base: Mask | None = None) -> Mask:
    """Keep ceil((1-p) N) highest-scoring prunable weights.

    Ties go to the lowest (layer, row, column) index. Non-prunable layers are
    copied from ``base`` (dense when no base is given).
    """
    _check_sparsity(sparsity)
    layers = scores.layers if isinstance(scores, ScoreSet) else [np.asarray(s, dtype=np.float64) for s in scores]
    for s in layers:
        if not np.all(np.isfinite(s)):
            raise DomainError("scores must be finite")
    prunable = list(prunable) if prunable is not None else [True] * len(layers)
    if len(prunable) != len(layers):
        raise StructuralError("prunable flags must match score layers")
    return _select(layers, sparsity, prunable, per_layer, base, restrict=False)


def _select(layers, sparsity, prunable, per_layer, base, restrict):
    """Mask keeping the top keys; with ``restrict`` only weights kept in ``base`` compete."""
    n_total = [layers[l].size for l in range(len(layers))]
    out = [None] * len(layers)
    idx = [l for l, p in enumerate(prunable) if p]
    allowed = [base.layers[l].ravel() if restrict else None for l in range(len(layers))]
    if per_layer:
        for l in idx:
            keep = select_top(layers[l].ravel(), kept_count(n_total[l], sparsity), allowed[l])
            out[l] = keep.reshape(layers[l].shape)
    elif idx:
        flat = np.concatenate([layers[l].ravel() for l in idx])
        allow = np.concatenate([allowed[l] for l in idx]) if restrict else None
        keep = select_top(flat, kept_count(flat.size, sparsity), allow)
        pos = 0
        for l in idx:
            out[l] = keep[pos:pos + n_total[l]].reshape(layers[l].shape)
            pos += n_total[l]
    for l, p in enumerate(prunable):
        if not p:
            out[l] = base.layers[l].copy() if base is not None else np.ones(layers[l].shape, dtype=bool)
    return Mask(out, list(prunable), float(sparsity))


def _synflow_log_scores(absw, logw, keep, prunable):
    """log |dR/dW * W| of the linearised |W| network for the prunable layers.

    ``absw``/``logw`` are |W|/sqrt(fan-in) and its log; pruned weights are
    removed through ``keep``. Entries whose score is zero get the most
    negative finite float so ties still resolve by index.
    """
    eff = [a * k for a, k in zip(absw, keep)]
    fwd, fwd_log = [np.ones(absw[0].shape[1])], [0.0]
    for a in eff:
        v = a @ fwd[-1]
        s = v.max(initial=0.0)
        fwd.append(v / s if s > 0 else v)
        fwd_log.append(fwd_log[-1] + (math.log(s) if s > 0 else 0.0))
    bwd, bwd_log = [np.ones(absw[-1].shape[0])], [0.0]
    for a in eff[::-1]:
        v = bwd[-1] @ a
        s = v.max(initial=0.0)
        bwd.append(v / s if s > 0 else v)
        bwd_log.append(bwd_log[-1] + (math.log(s) if s > 0 else 0.0))
    bwd = bwd[::-1]
    bwd_log = bwd_log[::-1]
    lowest = -np.finfo(np.float64).max
    out = []
    with np.errstate(divide="ignore"):
        for l, lw in enumerate(logw):
            if not prunable[l]:
                out.append(None)
                continue
            if not fwd[l].any() or not bwd[l + 1].any():
                log.warning("synflow: layer %d is disconnected, all its scores are zero", l + 1)
            # layer l maps fwd[l] -> fwd[l+1]; its upstream signal is bwd[l+1]
            s = lw + (np.log(bwd[l + 1]) + fwd_log[l] + bwd_log[l + 1])[:, None]
            s += np.log(fwd[l])[None, :]
            np.maximum(s, lowest, out=s)
            out.append(s)
    return out


def score_synflow(net: MaskedMlp, sparsity: float, rounds: int = 100, per_layer: bool = False,
                  history: list | None = None) -> Mask:
    """Iterative SynFlow with an exponential schedule; returns the final mask.

    Round r keeps (1-p)^(r/rounds) of the prunable weights, chosen among the
    weights still kept. Scores are ranked in log space so deep products do not
    overflow. ``history``, when given, receives the mask of every round.
    """
    _check_sparsity(sparsity)
    if rounds < 1:
        raise DomainError("rounds must be >= 1")
    mask = net.mask.copy()
    prunable = mask.prunable
    total = sum(m.size for m, p in zip(mask.layers, prunable) if p)
    final = kept_count(total, sparsity)
    if not any(prunable):
        return Mask(mask.layers, prunable, float(sparsity))
    absw = [np.abs(w) / math.sqrt(w.shape[1]) for w in net.weights]
    with np.errstate(divide="ignore"):
        logw = [np.log(a) for a in absw]
    for r in range(1, rounds + 1):
        if r == rounds:
            p_round = sparsity
        else:
            density = (1.0 - sparsity) ** (r / rounds)
            p_round = 1.0 - max(math.ceil(density * total), final) / total
        keys = _synflow_log_scores(absw, logw, mask.layers, prunable)
        for l, (s, m) in enumerate(zip(keys, mask.layers)):
            if s is None:
                keys[l] = np.zeros(m.shape)
        new = _select(keys, p_round, prunable, per_layer, mask, restrict=True)
        mask = Mask(new.layers, prunable, float(sparsity))
        if history is not None:
            history.append(mask)
    return mask


def score(net: MaskedMlp, method: str, rng: Rng | None = None, batch=None,
          fd_epsilon_scale: float = 1e-3, loss: str = "ce") -> ScoreSet:
    if method == "random":
        return score_random(net, rng or Rng(0))
    if method == "magnitude":
        return score_magnitude(net)
    if method in ("snip", "grasp") and batch is None:
        raise DomainError(f"{method} needs a scoring batch")
    if method == "snip":
        return score_snip(net, batch, loss)
    if method == "grasp":
        return score_grasp(net, batch, fd_epsilon_scale, loss)
    raise DomainError(f"unknown pruning method {method!r}")


def prune(net: MaskedMlp, method: str, sparsity: float, rng: Rng | None = None, batch=None,
          per_layer: bool = False, rounds: int = 100, loss: str = "ce",
          fd_epsilon_scale: float = 1e-3, apply: bool = True) -> Mask:
    """Score ``net`` with ``method`` and return (and by default apply) the mask."""
    _check_sparsity(sparsity)
    if method == "synflow":
        mask = score_synflow(net, sparsity, rounds, per_layer)
    else:
        s = score(net, method, rng, batch, fd_epsilon_scale, loss)
        layers = s.layers
        if method == "grasp":
            # GraSP removes the weights with the largest -W*Hg
            layers = [-x for x in layers]
        restrict = any(not m.all() for m, p in zip(net.mask.layers, net.mask.prunable) if p)
        mask = _select(layers, sparsity, net.mask.prunable, per_layer, net.mask, restrict)
    if apply:
        net.apply_mask(mask)
    return mask


def write_scores_csv(scores: ScoreSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "row", "col", "score"])
        for l, s in enumerate(scores.layers):
            rows, cols = np.indices(s.shape)
            for i, j, v in zip(rows.ravel(), cols.ravel(), s.ravel()):
                w.writerow([l + 1, int(i), int(j), repr(float(v))])
