"""Study orchestration: mask-graphon convergence and training/spectra runs.

Every study is a pure function of its config and master seed. Work is split
into cells whose outputs land under ``cells/``; a manifest records each
finished cell with the sha256 of its files so an interrupted run resumes
where it stopped. Aggregate CSVs are rebuilt from the cell files at the end.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path


from .data import SyntheticSpec, load_mnist, make_batch, mnist_dir
from .errors import DomainError, MissingDataError, NumericOverflowError
from .formats import graphon_from_json, graphon_to_json
from .graphon import (DEFAULT_K, StepGraphon, average_histograms, block_average, estimate_sas,
                      euclid_distance, hidden_layers, sample_mask)
from .kernel import GraphonStack, graphon_ntk
from .net import Mask, MaskedMlp, adam_step, batch_loss, init
from .numerics import Rng
from .prune import METHODS, prune
from .spectra import CSV_FIELDS as SPECTRA_FIELDS, spectral_report

log = logging.getLogger(__name__)

FIGURES = ("fig1", "fig2", "fig3", "appC", "appD")
SCALES = ("desk", "paper")
DIVERGENCE = 1e6
CURVE_FIELDS = ["method", "layer", "width", "trials", "distance"]
TRACE_FIELDS = ["method", "sparsity", "width", "seed", "step", "loss"]

# stream ids, so that adding a study never shifts another study's draws
_S_CONV, _S_TRAIN, _S_KBATCH, _S_KERNEL, _S_DATA = 1, 2, 3, 4, 5


def _pid(p: float) -> int:
    return int(round(p * 10000))


def _mid(method: str) -> int:
    return (METHODS + ("dense", "constant")).index(method)


# --------------------------------------------------------------------------
# pruning at initialization
# --------------------------------------------------------------------------

def default_source(widths) -> SyntheticSpec:
    return SyntheticSpec(n_classes=max(2, widths[-1]), dim=widths[0])


def pai_net(method: str, widths, sparsity: float, rng: Rng, source=None, batch_size: int = 128,
            rounds: int = 100, per_layer: bool = False, normalization: str = "scale-255") -> MaskedMlp:
    """Fresh net pruned at initialization; input and output layers stay dense."""
    widths = [int(w) for w in widths]
    net = init(widths, Mask.dense(widths), 1.0, rng.spawn(0))
    if method == "dense" or sparsity == 0.0:
        return net
    batch = None
    if method in ("snip", "grasp"):
        src = source if source is not None else default_source(widths)
        batch = make_batch(src, batch_size, normalization, rng.spawn(1))
    prune(net, method, sparsity, rng.spawn(2), batch, per_layer=per_layer, rounds=rounds)
    return net


def pai_masks(method: str, widths, sparsity: float, rng: Rng, source=None, batch_size: int = 128,
              rounds: int = 100, per_layer: bool = False) -> Mask:
    return pai_net(method, widths, sparsity, rng, source, batch_size, rounds, per_layer).mask


def width_histograms(method: str, width: int, sparsity: float, trials: int, rng: Rng, depth: int = 4,
                     k: int = DEFAULT_K, input_dim: int = 784, n_classes: int = 10, source=None,
                     batch_size: int = 128, rounds: int = 100, per_layer: bool = False) -> dict:
    """Trial-averaged SAS histograms per hidden-to-hidden layer at one width."""
    hists: dict[int, list] = {}
    widths = [input_dim] + [int(width)] * depth + [n_classes]
    for t in range(trials):
        mask = pai_masks(method, widths, sparsity, rng.spawn(int(width), t), source=source,
                         batch_size=batch_size, rounds=rounds, per_layer=per_layer)
        for l in hidden_layers(mask):
            hists.setdefault(l, []).append(estimate_sas(mask.layers[l], k))
    return {l: average_histograms(hs) for l, hs in hists.items()}


def distance_curves(hists: dict) -> dict:
    """``{(width, layer): graphon}`` to ``{layer: [(width, distance to widest)]}``."""
    widths = sorted({w for w, _ in hists})
    ref = widths[-1]
    curves: dict[int, list] = {}
    for (w, l) in sorted(hists, key=lambda t: (t[1], t[0])):
        curves.setdefault(l, []).append((w, euclid_distance(hists[(w, l)], hists[(ref, l)])))
    return curves


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainTrace:
    losses: list
    method: str
    sparsity: float
    width: int
    seed: int
    lr: float
    batch_size: int
    diverged: bool = False


def train(net: MaskedMlp, source, steps: int, lr: float, batch_size: int, rng: Rng,
          normalization: str = "scale-255") -> tuple[list, bool]:
    """Adam on fresh minibatches; returns the pre-update loss of every step.

    Stops early (and reports divergence) when the loss exceeds 1e6 or the
    forward pass overflows.
    """
    losses = []
    for s in range(steps):
        batch = make_batch(source, batch_size, normalization, rng.spawn(s))
        try:
            loss, _, grads = batch_loss(net, batch.inputs, batch.labels)
        except NumericOverflowError:
            return losses, True
        if not math.isfinite(loss) or loss > DIVERGENCE:
            return losses, True
        losses.append(loss)
        adam_step(net, grads, lr)
    return losses, False


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    depth: int = 4
    width: int = 256
    widths: tuple = (100, 250, 500, 1000)
    methods: tuple = ("random", "snip", "grasp", "synflow")
    sparsities: tuple = (0.8,)
    trials: int = 20
    seeds: tuple = (0, 1, 2)
    steps: int = 200
    lr: float = 1e-3
    batch_size: int = 128
    kernel_batch: int = 256
    grid: int = DEFAULT_K
    k: int = DEFAULT_K
    rounds: int = 100
    include_dense: bool = True
    include_constant: bool = True
    data: str = "auto"
    data_dir: str | None = None
    subset: int | None = 5000
    master_seed: int = 0

    def __post_init__(self):
        for name in ("widths", "methods", "sparsities", "seeds"):
            if not getattr(self, name):
                raise DomainError(f"config field {name!r} must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise DomainError("seeds must be distinct")
        if list(self.widths) != sorted(self.widths):
            raise DomainError("widths must be sorted ascending")
        for m in self.methods:
            if m not in METHODS:
                raise DomainError(f"unknown method {m!r}")
        for p in self.sparsities:
            if not 0.0 <= p < 1.0:
                raise DomainError(f"sparsity {p} outside [0, 1)")
        if self.depth < 1 or self.trials < 0 or self.steps < 0:
            raise DomainError("depth >= 1, trials >= 0 and steps >= 0 required")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


def preset(figure: str, scale: str = "desk") -> ExperimentConfig:
    if figure not in FIGURES:
        raise DomainError(f"unknown figure {figure!r}; choose from {FIGURES}")
    if scale not in SCALES:
        raise DomainError(f"unknown scale {scale!r}")
    desk = scale == "desk"
    conv = dict(widths=(100, 250, 500, 1000) if desk else (100, 500, 1000, 2000),
                trials=20 if desk else 100)
    spectra = dict(width=256 if desk else 1024, kernel_batch=256 if desk else 1024,
                   grid=DEFAULT_K, methods=("random", "snip", "synflow"))
    data = "auto" if desk else "mnist"
    if figure == "fig1":
        return ExperimentConfig(sparsities=(0.8,) if desk else (0.7, 0.8, 0.9), data=data, **conv)
    if figure == "appC":
        return ExperimentConfig(methods=("random", "magnitude"), sparsities=(0.8,) if desk else (0.7, 0.8, 0.9),
                                data=data, **conv)
    if figure == "fig2":
        return ExperimentConfig(sparsities=(0.9,) if desk else (0.5, 0.7, 0.8, 0.9, 0.95), data=data,
                                subset=5000 if desk else None, **spectra)
    if figure == "fig3":
        return ExperimentConfig(sparsities=(0.5, 0.7, 0.8, 0.9) if desk else (0.5, 0.7, 0.8, 0.9, 0.95),
                                steps=0, data=data, subset=5000 if desk else None, **spectra)
    return ExperimentConfig(sparsities=(0.5, 0.7, 0.9) if desk else (0.5, 0.7, 0.8, 0.9, 0.95), data=data,
                            subset=5000 if desk else None, **spectra)


def resolve_data(config: ExperimentConfig, n_classes: int = 10, dim: int = 784):
    """Data source for a config: MNIST when requested or found, else synthetic blobs."""
    if config.data == "synthetic":
        return SyntheticSpec(n_classes=n_classes, dim=dim), "synthetic"
    d = mnist_dir(config.data_dir)
    try:
        src = load_mnist(d)
    except MissingDataError:
        if config.data == "mnist":
            raise
        return SyntheticSpec(n_classes=n_classes, dim=dim), "synthetic"
    if config.subset:
        src = src.subset(config.subset, Rng(config.master_seed, (_S_DATA,)))
    return src, "mnist"


# --------------------------------------------------------------------------
# cells and manifest
# --------------------------------------------------------------------------

def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Manifest:
    """Completed cells and the hashes of their files, persisted after every cell."""

    def __init__(self, out_dir: Path, config: ExperimentConfig):
        self.dir = out_dir
        self.path = out_dir / "manifest.json"
        self.config = config.to_json()
        self.cells: dict = {}
        self.meta: dict = {}
        if self.path.exists():
            try:
                doc = json.loads(self.path.read_text())
            except ValueError:
                doc = {}
            if doc.get("config") == self.config:
                self.cells = doc.get("cells", {})

    def done(self, key: str) -> bool:
        files = self.cells.get(key)
        if files is None:
            return False
        for name, digest in files.items():
            p = self.dir / name
            if not p.exists() or _sha(p.read_bytes()) != digest:
                return False
        return True

    def record(self, key: str, files: dict[str, bytes]) -> None:
        for name, data in files.items():
            p = self.dir / name
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(data)
        self.cells[key] = {name: _sha(data) for name, data in files.items()}
        self.save()

    def save(self) -> None:
        doc = {"config": self.config, "meta": self.meta,
               "cells": {k: self.cells[k] for k in sorted(self.cells)}}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        os.replace(tmp, self.path)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _read_csv_rows(path: Path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return list(r)


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------

def run_convergence_study(config: ExperimentConfig, out_dir, name: str = "convergence") -> list[Path]:
    """Averaged SAS histograms per method/sparsity/width and their distance curves.

    Writes ``histograms/<method>_p<sparsity>_w<width>_l<layer>.json`` and a
    curve CSV (method,layer,width,trials,distance): ``<name>.csv`` for a
    single sparsity, else one ``<name>_p<sparsity>.csv`` per sparsity.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, config)
    source, kind = resolve_data(config)
    man.meta["data"] = kind
    root = Rng(config.master_seed, (_S_CONV,))
    paths = []
    for p in config.sparsities:
        rows = []
        for method in config.methods:
            hists = {}
            for w in config.widths:
                key = f"conv/{method}/{p!r}/{w}"
                names = {l: f"histograms/{method}_p{p!r}_w{w}_l{l}.json"
                         for l in range(1, config.depth)}
                if not man.done(key):
                    log.info("convergence cell %s", key)
                    got = width_histograms(method, w, p, config.trials, root.spawn(_mid(method), _pid(p)),
                                           config.depth, config.k, 784, 10, source, config.batch_size,
                                           config.rounds)
                    man.record(key, {names[l]: graphon_to_json(g).encode() for l, g in got.items()})
                for l, fname in names.items():
                    hists[(w, l)] = graphon_from_json((out / fname).read_text())
            for l, pts in distance_curves(hists).items():
                for w, d in pts:
                    rows.append([method, l, w, config.trials, repr(d)])
        fname = f"{name}.csv" if len(config.sparsities) == 1 else f"{name}_p{p!r}.csv"
        path = out / fname
        path.write_bytes(_csv_bytes(CURVE_FIELDS, rows))
        paths.append(path)
    man.save()
    return paths


def graphon_stack_for(mask: Mask | None, sparsity: float, depth: int, width: int, k: int, rng: Rng,
                      constant: bool = False) -> GraphonStack:
    """Kernel stack: dense input/output graphons, hidden layers from a sampled mask.

    A fresh mask is drawn from each hidden-to-hidden layer's SAS estimate
    (so the method's own per-layer density is kept) and that mask's block
    densities form the layer graphon. ``constant`` uses 1 - sparsity instead.
    """
    layers = [StepGraphon.constant(1.0, k)]
    for l in range(1, depth):
        if constant:
            layers.append(StepGraphon.constant(1.0 - sparsity, k))
            continue
        est = estimate_sas(mask.layers[l], k)
        sampled = sample_mask(est, width, width, rng=rng.spawn(l))
        layers.append(block_average(sampled, k, "sampled"))
    layers.append(StepGraphon.constant(1.0, k))
    return GraphonStack(layers)


def run_training_study(config: ExperimentConfig, out_dir, name: str = "training",
                       traces: bool = True, spectra: bool = True) -> dict:
    """Loss traces of PaI-pruned nets and spectra of graphon-sampled kernels.

    Writes ``<name>_traces.csv`` (method,sparsity,width,seed,step,loss) and
    ``<name>_spectra.csv``. The kernel batch is shared by all methods of a seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, config)
    source, kind = resolve_data(config)
    man.meta["data"] = kind
    root = Rng(config.master_seed, (_S_TRAIN,))
    widths = [784] + [config.width] * config.depth + [10]
    cells = [(m, p) for m in config.methods for p in config.sparsities]
    if config.include_dense:
        cells.insert(0, ("dense", 0.0))
    if spectra and config.include_constant:
        # baseline kernels at the same densities; no network is trained for these
        cells += [("constant", p) for p in config.sparsities]
    trace_rows, reports, diverged = [], [], []
    for seed in config.seeds:
        kbatch = None
        for method, p in cells:
            key = f"train/{method}/{p!r}/{seed}"
            tname = f"cells/{method}_p{p!r}_s{seed}_trace.csv"
            sname = f"cells/{method}_p{p!r}_s{seed}_spectra.csv"
            has_trace = traces and method != "constant"
            if not man.done(key):
                log.info("training cell %s", key)
                rng = root.spawn(_mid(method), _pid(p), seed)
                net = None
                if method != "constant":
                    net = pai_net(method, widths, p, rng.spawn(0), source, config.batch_size, config.rounds)
                files = {}
                if has_trace:
                    losses, div = train(net.copy(), source, config.steps, config.lr, config.batch_size,
                                        rng.spawn(1))
                    rows = [[method, repr(p), config.width, seed, s, repr(v)] for s, v in enumerate(losses)]
                    if div:
                        rows.append([method, repr(p), config.width, seed, len(losses), "diverged"])
                    files[tname] = _csv_bytes(TRACE_FIELDS, rows)
                if spectra:
                    if kbatch is None:
                        kbatch = make_batch(source, config.kernel_batch, "unit-sphere",
                                            Rng(config.master_seed, (_S_KBATCH, seed)))
                    if method == "dense":
                        stack, grid = GraphonStack.constant(1.0, config.depth, k=1), 1
                    else:
                        stack = graphon_stack_for(net.mask if net else None, p, config.depth, config.width,
                                                  config.k, rng.spawn(2), constant=method == "constant")
                        grid = config.grid
                    kern = graphon_ntk(stack, kbatch.inputs, grid)
                    rep = spectral_report(kern, 5, method=method, sparsity=p, width=config.width, seed=seed)
                    files[sname] = _csv_bytes(SPECTRA_FIELDS, [rep.csv_row()])
                man.record(key, files)
            if has_trace:
                rows = _read_csv_rows(out / tname)
                if rows and rows[-1][-1] == "diverged":
                    diverged.append(key)
                    rows = rows[:-1]
                trace_rows.extend(rows)
            if spectra:
                reports.extend(_read_csv_rows(out / sname))
    result = {"diverged": diverged}
    if traces:
        p = out / f"{name}_traces.csv"
        p.write_bytes(_csv_bytes(TRACE_FIELDS, trace_rows))
        result["traces"] = p
    if spectra:
        p = out / f"{name}_spectra.csv"
        p.write_bytes(_csv_bytes(SPECTRA_FIELDS, reports))
        result["spectra"] = p
    man.meta["diverged"] = diverged
    man.save()
    return result


def read_traces(path) -> list[TrainTrace]:
    """Group a traces CSV back into :class:`TrainTrace` objects (lr and batch size unknown: nan/0)."""
    groups: dict = {}
    for m, p, w, s, step, loss in _read_csv_rows(Path(path)):
        groups.setdefault((m, float(p), int(w), int(s)), []).append(float(loss))
    return [TrainTrace(v, m, p, w, s, float("nan"), 0) for (m, p, w, s), v in groups.items()]


def reproduce(figure: str, scale: str = "desk", out_dir="repro", master_seed: int = 0,
              data_dir=None, overrides: dict | None = None) -> Path:
    """Run a figure's study with its preset and write CSVs named after the figure."""
    config = preset(figure, scale)
    kw = dict(overrides or {})
    kw["master_seed"] = master_seed
    if data_dir is not None:
        kw["data_dir"] = str(data_dir)
    config = config.replace(**kw)
    if scale == "paper":
        d = mnist_dir(config.data_dir)
        if d is None:
            raise MissingDataError("paper-scale runs need MNIST; set GPLAB_DATA_DIR or pass a data directory")
        load_mnist(d)
    out = Path(out_dir) / figure
    if figure in ("fig1", "appC"):
        run_convergence_study(config, out, name=f"{figure}_convergence")
    elif figure == "fig2":
        run_training_study(config, out, name=figure, spectra=False)
    elif figure == "fig3":
        run_training_study(config, out, name=figure, traces=False)
    else:
        run_training_study(config, out, name=figure)
    return out
