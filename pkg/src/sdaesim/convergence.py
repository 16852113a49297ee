"""Pathwise convergence studies.

A study draws one Brownian path per seed on a fine grid of ``n_ref`` steps,
integrates the primary scheme on that grid as a stand-in for the exact
solution, reruns it on coarser grids driven by the block-summed increments,
and fits ``error(n) ~ beta * n^(-rate)`` per sample by least squares in
log-log coordinates.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .brownian import generate
from .errors import GridMismatch, InvalidResolution, SdaeError
from .integrators import Trajectory, integrate
from .problem import SdaeProblem


def pathwise_error(coarse: Trajectory, reference: Trajectory) -> float:
    """Max Euclidean distance over the coarse grid points, which the reference grid contains."""
    n_c, n_r = coarse.n, reference.n
    if n_c < 1 or n_r % n_c:
        raise GridMismatch(f"coarse n={n_c} does not divide reference n={n_r}")
    stride = n_r // n_c
    ref_times = reference.times[::stride]
    if not np.allclose(ref_times, coarse.times, rtol=0.0, atol=1e-12 * max(1.0, ref_times[-1])):
        raise GridMismatch("coarse and reference grids do not share their points")
    diff = coarse.states - reference.states[::stride]
    return float(np.max(np.linalg.norm(diff, axis=1)))


def fit_rate(ns: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of ``log(error) = intercept - rate * log(n)``.

    Returns ``(nan, nan)`` when fewer than two usable (positive, finite)
    points exist.
    """
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = np.isfinite(errors) & (errors > 0)
    if np.count_nonzero(keep) < 2 or len(np.unique(ns[keep])) < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(np.log(ns[keep]), np.log(errors[keep]), 1)
    return float(-slope), float(intercept)


@dataclass
class ConvergenceReport:
    seed: int
    n_ref: int
    resolutions: list[int]
    errors: list[float]
    rate: float
    intercept: float
    status: str = "ok"
    message: str = ""
    max_constraint_ratio: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def rate_defined(self) -> bool:
        return self.ok and math.isfinite(self.rate)

    @property
    def beta(self) -> float:
        return math.exp(self.intercept) if math.isfinite(self.intercept) else math.nan


def _check_resolutions(n_ref: int, resolutions: Sequence[int]) -> None:
    if n_ref < 1 or n_ref & (n_ref - 1):
        raise InvalidResolution(f"n_ref={n_ref} is not a power of two")
    if not resolutions:
        raise InvalidResolution("at least one resolution is required")
    for n in resolutions:
        if n < 1 or n_ref % n:
            raise InvalidResolution(f"resolution {n} does not divide n_ref={n_ref}")


def _constraint_ratio(traj: Trajectory) -> float:
    if traj.constraint_residuals is None:
        return 0.0
    scale = 1.0 + np.linalg.norm(traj.states[1:], axis=1)
    return float(np.max(traj.constraint_residuals / scale, initial=0.0))


def run_sample(p: SdaeProblem, seed: int, n_ref: int, resolutions: Sequence[int],
               check_constraints: bool = True) -> ConvergenceReport:
    """Errors of the primary scheme at each resolution against the ``n_ref`` run.

    Integration failures (overflow, singular solves) produce a report with
    ``status="failed"`` instead of raising.
    """
    resolutions = [int(n) for n in resolutions]
    _check_resolutions(n_ref, resolutions)
    path = generate(seed, p.horizon, n_ref, p.d1)
    errors: list[float] = []
    ratio = 0.0
    try:
        reference = integrate(p, n_ref, path, "primary", check_constraints=check_constraints)
        ratio = _constraint_ratio(reference)
        for n in resolutions:
            coarse = integrate(p, n, path, "primary", check_constraints=check_constraints)
            ratio = max(ratio, _constraint_ratio(coarse))
            errors.append(pathwise_error(coarse, reference))
    except SdaeError as exc:
        return ConvergenceReport(seed, n_ref, resolutions, errors, math.nan, math.nan,
                                 status="failed", message=f"{type(exc).__name__}: {exc}",
                                 max_constraint_ratio=ratio)
    rate, intercept = fit_rate(resolutions, errors)
    return ConvergenceReport(seed, n_ref, resolutions, errors, rate, intercept,
                             max_constraint_ratio=ratio)


@dataclass
class StudyResult:
    reports: list[ConvergenceReport]
    mean_rate: float
    std_rate: float
    n_failed: int
    metadata: dict = field(default_factory=dict)

    @property
    def successful(self) -> list[ConvergenceReport]:
        return [r for r in self.reports if r.ok]


def summarize(reports: list[ConvergenceReport]) -> tuple[float, float, int]:
    rates = np.array([r.rate for r in reports if r.rate_defined])
    n_failed = sum(not r.ok for r in reports)
    if rates.size == 0:
        return math.nan, math.nan, n_failed
    return float(rates.mean()), float(rates.std()), n_failed


def run_study(p: SdaeProblem, seeds: Sequence[int], n_ref: int, resolutions: Sequence[int],
              parallel: bool = False, max_workers: int | None = None,
              check_constraints: bool = True) -> StudyResult:
    """One :func:`run_sample` per seed; the result depends only on the inputs.

    With ``parallel`` the samples run on a thread pool.  Each sample is
    computed by exactly the same code path either way, and results are
    collected in seed order, so serial and parallel output are identical.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("seeds must be nonempty")
    _check_resolutions(n_ref, resolutions)

    def one(seed):
        return run_sample(p, seed, n_ref, resolutions, check_constraints)

    if parallel and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(one, seeds))
    else:
        reports = [one(s) for s in seeds]
    mean, std, n_failed = summarize(reports)
    meta = {"model": p.name, "n_ref": n_ref, "resolutions": list(resolutions),
            "horizon": p.horizon}
    return StudyResult(reports, mean, std, n_failed, meta)


def mean_errors(study: StudyResult) -> tuple[list[int], list[float]]:
    ok = study.successful
    if not ok:
        return [], []
    ns = ok[0].resolutions
    errs = np.array([r.errors for r in ok])
    return list(ns), [float(e) for e in errs.mean(axis=0)]


def write_study_csvs(study: StudyResult, out_dir) -> dict[str, Path]:
    """Write ``samples.csv``, ``summary.csv`` and ``plot_data.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizon = study.metadata.get("horizon", 1.0)
    files = {"samples": out / "samples.csv", "summary": out / "summary.csv",
             "plot": out / "plot_data.csv"}
    with files["samples"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n", "h", "error"])
        for r in study.reports:
            for n, e in zip(r.resolutions, r.errors):
                w.writerow([r.seed, n, f"{horizon / n:.17g}", f"{e:.17g}"])
    with files["summary"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "rate", "intercept", "status"])
        for r in study.reports:
            status = r.status if r.ok and r.rate_defined else ("undefined" if r.ok else r.status)
            w.writerow([r.seed, f"{r.rate:.17g}", f"{r.intercept:.17g}", status])
    ns, errs = mean_errors(study)
    with files["plot"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["log2n", "log10_mean_error"])
        for n, e in zip(ns, errs):
            w.writerow([f"{math.log2(n):.17g}",
                        f"{math.log10(e):.17g}" if e > 0 else "nan"])
    return files
