"""``gplab`` command line. JSON on stdout, diagnostics on stderr.

Exit codes: 0 success, 2 argument/domain errors, 3 data errors, 1 anything else.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .data import NORMALIZATIONS, SyntheticSpec, load_mnist, make_batch
from .errors import ConfigurationError, DataError, GplabError, MissingDataError
from .experiments import FIGURES, SCALES, pai_net, reproduce, train
from .formats import (read_graphon, read_kernel, read_mask, write_graphon, write_kernel, write_mask,
                      write_net)
from .graphon import DEFAULT_K, euclid_distance, estimate_sas, sample_mask
from .kernel import GraphonStack, constant_ntk, graphon_ntk, mc_empirical_ntk
from .net import Mask
from .numerics import Rng
from .prune import METHODS
from .spectra import CSV_FIELDS, spectral_report

log = logging.getLogger("gplab")


def _widths(text: str) -> list[int]:
    try:
        out = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"widths must be comma-separated integers, got {text!r}")
    if len(out) < 2 or min(out) < 1:
        raise argparse.ArgumentTypeError("need at least two positive widths")
    return out


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _source(args, dim=784, n_classes=10):
    if args.data == "mnist":
        return load_mnist(args.data_dir)
    return SyntheticSpec(n_classes=n_classes, dim=dim)


# -- subcommands --------------------------------------------------------------

def cmd_prune(args):
    widths = args.widths
    source = _source(args, widths[0], max(2, widths[-1]))
    net = pai_net(args.method, widths, args.sparsity, Rng(args.seed), source, args.batch_size,
                  args.rounds, args.per_layer)
    mask = net.mask
    write_mask(mask, args.out)
    kept, total = mask.counts()
    _emit({"method": args.method, "target": args.sparsity, "achieved": mask.sparsity(),
           "kept": kept, "total": total,
           "layer_sparsity": mask.layer_sparsity(),
           "layer_kept": [int(m.sum()) for m in mask.layers]})


def cmd_graphon_estimate(args):
    mask = read_mask(args.mask)
    n = len(mask.layers)
    layer = args.layer if args.layer is not None else (2 if n > 2 else 1)
    if not 1 <= layer <= n:
        raise ConfigurationError(f"layer must be in 1..{n}")
    g = estimate_sas(mask.layers[layer - 1], args.k)
    write_graphon(g, args.out)
    _emit({"layer": layer, "k": g.k, "mean": g.mean(), "min": float(g.grid.min()), "max": float(g.grid.max())})


def cmd_graphon_distance(args):
    _emit(euclid_distance(read_graphon(args.a), read_graphon(args.b)))


def cmd_graphon_sample(args):
    g = read_graphon(args.graphon)
    calib = "rescale" if args.sparsity is not None else "none"
    m = sample_mask(g, args.n_out, args.n_in, args.sparsity, calib, Rng(args.seed))
    target = args.sparsity if args.sparsity is not None else 0.0
    mask = Mask([m], [True], target)
    write_mask(mask, args.out)
    _emit({"n_out": args.n_out, "n_in": args.n_in, "kept": int(m.sum()), "density": float(m.mean())})


def cmd_ntk(args):
    source = _source(args)
    batch = make_batch(source, args.b, args.normalization, Rng(args.seed, (3,)))
    x = batch.inputs
    if args.graphon and args.constant is not None:
        raise ConfigurationError("give either --graphon or --constant, not both")
    if args.graphon:
        g = read_graphon(args.graphon)
        layers = [g.__class__.constant(1.0, g.k)] + [g] * (args.depth - 1) + [g.__class__.constant(1.0, g.k)]
        stack = GraphonStack(layers)
    else:
        c = 1.0 if args.constant is None else args.constant
        stack = None
    if args.empirical:
        if stack is None:
            stack = GraphonStack.constant(c, args.depth, k=1)
        widths = [x.shape[1]] + [args.width] * args.depth + [1]
        kern = mc_empirical_ntk(widths, stack, x, args.n_inits, Rng(args.seed, (4,)),
                                include_pruned_params=args.include_pruned_params)
    elif stack is None:
        kern = constant_ntk(c, args.depth, x)
    else:
        kern = graphon_ntk(stack, x, args.grid, args.include_param_graphon)
    write_kernel(kern, args.out)
    rep = np.linalg.eigvalsh(kern.values)
    _emit({"b": kern.size, "kind": kern.kind, "lambda_1": float(rep[-1]), "trace": float(np.trace(kern.values))})


def cmd_spectra(args):
    kern = read_kernel(args.kernel)
    fit = (args.fit_min, args.fit_max) if args.fit_min is not None and args.fit_max is not None else None
    rep = spectral_report(kern, args.k, fit, method=args.method, sparsity=args.sparsity,
                          width=args.width, seed=args.seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    w.writerow(rep.csv_row())


def cmd_train(args):
    widths = args.widths
    source = _source(args, widths[0], max(2, widths[-1]))
    rng = Rng(args.seed)
    net = pai_net(args.method, widths, args.sparsity, rng.spawn(0), source, args.batch_size, args.rounds)
    losses, diverged = train(net, source, args.steps, args.lr, args.batch_size, rng.spawn(1))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for s, v in enumerate(losses):
            w.writerow([s, repr(v)])
    if args.save_net:
        write_net(net, args.save_net)
    _emit({"method": args.method, "sparsity": args.sparsity, "steps": len(losses), "diverged": diverged,
           "first_loss": losses[0] if losses else None, "final_loss": losses[-1] if losses else None})


def cmd_reproduce(args):
    out = reproduce(args.figure, args.scale, args.out, args.seed, args.data_dir)
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*.csv") if p.parent == out)
    _emit({"figure": args.figure, "scale": args.scale, "out": str(out), "csv": files})


# -- parser -------------------------------------------------------------------

def _common(p, seed=True):
    p.add_argument("--config", metavar="FILE", help="TOML file of option values; flags override it")
    p.add_argument("--threads", type=int, default=None, metavar="N", help="cap on worker threads")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")


def _data_opts(p):
    p.add_argument("--data", choices=("synthetic", "mnist"), default="synthetic",
                   help="data source for scoring/training batches")
    p.add_argument("--data-dir", default=None, help="MNIST directory (default $GPLAB_DATA_DIR)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gplab", description="Graphon analysis of pruning at initialization.")
    ap.add_argument("--version", action="version", version=f"gplab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prune", help="prune a fresh network and write a mask file")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--sparsity", required=True, type=float)
    p.add_argument("--widths", required=True, type=_widths, help="e.g. 784,256,256,256,10")
    p.add_argument("--out", required=True, help="output mask file (GPMK)")
    p.add_argument("--per-layer", action="store_true", help="rank within each layer instead of globally")
    p.add_argument("--rounds", type=int, default=100, help="SynFlow rounds (default 100)")
    p.add_argument("--batch-size", type=int, default=128, help="scoring batch size for SNIP/GraSP")
    _data_opts(p)
    _common(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("graphon-estimate", help="SAS histogram of one mask layer")
    p.add_argument("mask", help="mask file (GPMK)")
    p.add_argument("--layer", type=int, default=None, help="1-based layer (default: first hidden-to-hidden)")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="grid resolution (default 64)")
    p.add_argument("--out", required=True, help="output graphon JSON")
    _common(p, seed=False)
    p.set_defaults(func=cmd_graphon_estimate)

    p = sub.add_parser("graphon-distance", help="Euclidean distance between two graphon grids")
    p.add_argument("a")
    p.add_argument("b")
    _common(p, seed=False)
    p.set_defaults(func=cmd_graphon_distance)

    p = sub.add_parser("graphon-sample", help="draw a mask layer from a graphon")
    p.add_argument("graphon", help="graphon JSON")
    p.add_argument("--n-out", type=int, required=True)
    p.add_argument("--n-in", type=int, required=True)
    p.add_argument("--sparsity", type=float, default=None, help="rescale the graphon to this sparsity first")
    p.add_argument("--out", required=True, help="output mask file (GPMK)")
    _common(p)
    p.set_defaults(func=cmd_graphon_sample)

    p = sub.add_parser("ntk", help="compute a kernel matrix and write it (GPKM)")
    p.add_argument("--graphon", default=None, help="graphon JSON used for every hidden-to-hidden layer")
    p.add_argument("--constant", type=float, default=None, help="constant graphon value c in (0, 1]")
    p.add_argument("--depth", type=int, default=4, help="hidden layers L (default 4)")
    p.add_argument("--batch", dest="data", choices=("synthetic", "mnist"), default="synthetic",
                   help="kernel batch source")
    p.add_argument("--data-dir", default=None, help="MNIST directory (default $GPLAB_DATA_DIR)")
    p.add_argument("--b", type=int, default=64, help="kernel batch size (default 64)")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="unit-sphere")
    p.add_argument("--grid", type=int, default=256, help="quadrature grid R (default 256)")
    p.add_argument("--include-param-graphon", action="store_true", help="masked-parameter variant")
    p.add_argument("--empirical", action="store_true", help="Monte Carlo finite-width estimate instead")
    p.add_argument("--include-pruned-params", action="store_true",
                   help="with --empirical, count gradients at pruned positions too")
    p.add_argument("--width", type=int, default=512, help="hidden width for --empirical")
    p.add_argument("--n-inits", type=int, default=8, help="initializations for --empirical")
    p.add_argument("--out", required=True, help="output kernel file (GPKM)")
    _common(p)
    p.set_defaults(func=cmd_ntk)

    p = sub.add_parser("spectra", help="spectral metrics of a kernel file, as CSV")
    p.add_argument("kernel", help="kernel file (GPKM)")
    p.add_argument("--k", type=int, default=5, help="top-k for energy (default 5)")
    p.add_argument("--fit-min", type=int, default=None, help="first eigenvalue index of the power-law fit")
    p.add_argument("--fit-max", type=int, default=None, help="last eigenvalue index of the power-law fit")
    p.add_argument("--method", default="", help="label for the CSV row")
    p.add_argument("--sparsity", type=float, default=float("nan"), help="label for the CSV row")
    p.add_argument("--width", type=int, default=0, help="label for the CSV row")
    _common(p)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("train", help="prune at init, then train with Adam; write the loss trace")
    p.add_argument("--method", default="random", choices=METHODS + ("dense",))
    p.add_argument("--sparsity", type=float, default=0.9)
    p.add_argument("--widths", type=_widths, default=_widths("784,256,256,256,256,10"))
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--rounds", type=int, default=100, help="SynFlow rounds (default 100)")
    p.add_argument("--out", required=True, help="output trace CSV (step,loss)")
    p.add_argument("--save-net", default=None, help="also write the trained network (GPNN)")
    _data_opts(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reproduce", help="run a figure's study and write its CSVs")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--out", default="repro", help="output root directory")
    p.add_argument("--data-dir", default=None, help="MNIST directory (default $GPLAB_DATA_DIR)")
    _common(p)
    p.set_defaults(func=cmd_reproduce)
    return ap


def _load_config(path) -> dict:
    try:
        import tomllib as tomli
    except ImportError:  # Python < 3.11
        import tomli

    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise MissingDataError(f"config file {path} not found")
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override.

    The config is read before the real parse, so it may also supply
    otherwise-required options.
    """
    ap = build_parser()
    subs = ap._subparsers._group_actions[0].choices
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in subs), None)
    if known.config and command is not None:
        sub = subs[command]
        actions = {a.dest: a for a in sub._actions}
        for key, val in _load_config(known.config).items():
            if key not in actions or key in ("config", "help", "func"):
                raise ConfigurationError(f"unknown config key {key!r} for {command}")
            action = actions[key]
            if action.type is not None and isinstance(val, (str, int, float)):
                val = action.type(str(val)) if action.type is _widths else action.type(val)
            if action.choices is not None and val not in action.choices:
                raise ConfigurationError(f"config value {val!r} not allowed for {key}")
            action.required = False
            sub.set_defaults(**{key: val})
    return ap.parse_args(argv)


@contextlib.contextmanager
def _thread_cap(n):
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except GplabError as exc:
        print(f"gplab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        with _thread_cap(args.threads):
            args.func(args)
    except GplabError as exc:
        print(f"gplab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"gplab: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:  # noqa: BLE001 - uniform exit code for internal failures
        print(f"gplab: internal error: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
