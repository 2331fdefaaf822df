"""Time the hot kernels on the numba and pure-numpy backends.

The backend is fixed at import time by GPLAB_DISABLE_NUMBA, so each backend
runs in its own child process. Usage:

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeat):
    fn()  # warm-up (numba compilation, caches)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def child(repeat: int) -> dict:
    import numpy as np

    from gplab import backend
    from gplab._kernels import block_density, jacobi_eigh, relu_moments
    from gplab.graphon import StepGraphon
    from gplab.kernel import GraphonStack, graphon_ntk
    from gplab.spectra import spectral_report

    g = np.random.default_rng(0)
    a = g.normal(size=(128, 160))
    sym = a @ a.T
    sxx, syy = g.uniform(0.1, 2, 1_000_000), g.uniform(0.1, 2, 1_000_000)
    sxy = g.uniform(-1, 1, 1_000_000) * np.sqrt(sxx * syy)
    mask = g.random((1000, 1000)) < 0.2
    edges = np.linspace(0, 1000, 65).astype(np.int64)
    x = g.normal(size=(128, 784))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    stack = GraphonStack([StepGraphon(g.uniform(0.05, 1, (64, 64))) for _ in range(5)])
    cases = {
        "jacobi_eigh 128x128": lambda: jacobi_eigh(sym),
        "relu_moments 1e6 pairs": lambda: relu_moments(sxx, sxy, syy),
        "block_density 1000x1000, K=64": lambda: block_density(mask, edges, edges),
        "graphon_ntk B=128, L=4, R=64": lambda: graphon_ntk(stack, x, grid=64),
        "spectral_report B=256": lambda: spectral_report(np.cov(g.normal(size=(256, 300)))),
    }
    return {"backend": backend(), "seconds": {k: _best(f, repeat) for k, f in cases.items()}}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the timings here")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        json.dump(child(args.repeat), sys.stdout)
        return 0
    results = {}
    for name, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, GPLAB_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        doc = json.loads(out.stdout)
        if doc["backend"] != name:
            print(f"warning: asked for {name}, child ran {doc['backend']}", file=sys.stderr)
        results[name] = doc["seconds"]
    width = max(len(k) for k in results["numba"])
    print(f"{'kernel':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speed-up':>8}")
    for k in results["numba"]:
        nb, npy = results["numba"][k], results["numpy"][k]
        print(f"{k:<{width}}  {nb:>10.4f}  {npy:>10.4f}  {npy / nb:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
