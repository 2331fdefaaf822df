"""Scale-free spectral summaries of kernel matrices."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import DomainError, InsufficientDataError, KernelValidityError
from .kernel import KernelMatrix
from .numerics import default_fit_range, powerlaw_fit, sym_eigvals

PSD_FLOOR = 1e-8
CSV_FIELDS = ["method", "sparsity", "width", "seed", "alpha", "eff_rank", "gap", "energy_top5"]
METRICS = ("alpha", "effective_rank", "spectral_gap", "energy_topk")


@dataclass
class SpectralReport:
    alpha: float
    effective_rank: float
    spectral_gap: float
    energy_topk: float
    k: int = 5
    fit_range: tuple[int, int] = (2, 2)
    gap_degenerate: bool = False
    eigenvalues: np.ndarray | None = field(default=None, repr=False, compare=False)
    method: str = ""
    sparsity: float = float("nan")
    width: int = 0
    seed: int = 0

    def metrics(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}

    def csv_row(self) -> list:
        return [self.method, repr(float(self.sparsity)), int(self.width), int(self.seed),
                repr(float(self.alpha)), repr(float(self.effective_rank)), repr(float(self.spectral_gap)),
                repr(float(self.energy_topk))]


def spectral_report(kernel, k: int = 5, fit_range: tuple[int, int] | None = None, **meta) -> SpectralReport:
    """Decay exponent, effective rank, gap and top-k energy of a PSD kernel.

    A zero second eigenvalue gives ``spectral_gap = inf`` and sets
    ``gap_degenerate``. The fit range is clipped to the strictly positive part
    of the spectrum and recorded in the report.
    """
    values = kernel.values if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=np.float64)
    b = values.shape[0]
    if k < 1 or b < k + 1:
        raise InsufficientDataError(f"need at least k+1={k + 1} samples, got {b}")
    spec = sym_eigvals(values)
    raw = spec.raw
    lam = spec.values
    lam1 = lam[0]
    if lam1 <= 0:
        raise KernelValidityError("kernel has no positive eigenvalue")
    if raw.min() < -PSD_FLOOR * lam1:
        raise KernelValidityError(f"kernel not PSD: eigenvalue {raw.min():.3e} below -{PSD_FLOOR}*lambda_1")
    total = float(lam.sum())
    eff = total / lam1
    if lam[1] > 0:
        gap, degenerate = float(lam1 / lam[1]), False
    else:
        gap, degenerate = math.inf, True
    energy = float(lam[:k].sum() / total)
    lo, hi = fit_range or default_fit_range(b)
    n_pos = int(np.count_nonzero(lam > 0))
    hi = min(hi, n_pos)
    try:
        alpha = powerlaw_fit(lam, lo, hi)
    except InsufficientDataError:
        alpha = float("nan")
    return SpectralReport(alpha, eff, gap, energy, k, (lo, hi), degenerate, lam, **meta)


def compare_methods(reports) -> dict:
    """Per-sparsity rankings of methods and per-method Spearman trends.

    Reports sharing (method, sparsity) are averaged first. Rankings list
    methods from the largest metric value down. Trends are Spearman rho of
    the metric against sparsity (nan when a method has < 2 sparsity levels).
    """
    cells: dict[tuple[str, float], list] = {}
    for r in reports:
        cells.setdefault((r.method, float(r.sparsity)), []).append(r)
    means = {key: {m: float(np.mean([getattr(r, m) for r in rs])) for m in METRICS}
             for key, rs in cells.items()}
    methods = sorted({m for m, _ in means})
    levels = sorted({p for _, p in means})
    ranking = {}
    for p in levels:
        present = [m for m in methods if (m, p) in means]
        ranking[p] = {metric: sorted(present, key=lambda m: (-means[(m, p)][metric], m))
                      for metric in METRICS}
    trend = {}
    for m in methods:
        ps = [p for p in levels if (m, p) in means]
        trend[m] = {}
        for metric in METRICS:
            ys = [means[(m, p)][metric] for p in ps]
            if len(ps) < 2 or np.ptp(ys) == 0:
                trend[m][metric] = float("nan")
            else:
                trend[m][metric] = float(spearmanr(ps, ys).statistic)
    return {"means": means, "ranking": ranking, "trend": trend}


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in reports:
            w.writerow(r.csv_row())


def read_reports_csv(path) -> list[SpectralReport]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if list(row) != CSV_FIELDS:
                raise DomainError("unexpected spectra CSV header")
            out.append(SpectralReport(float(row["alpha"]), float(row["eff_rank"]), float(row["gap"]),
                                      float(row["energy_top5"]), method=row["method"],
                                      sparsity=float(row["sparsity"]), width=int(row["width"]),
                                      seed=int(row["seed"])))
    return out
