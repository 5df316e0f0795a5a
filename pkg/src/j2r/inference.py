"""Variance estimates and confidence intervals.

Order-statistic convention: the level-q quantile of B values is the k-th
smallest with k = ceil(q * B).
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import norm

from .calibrate import CalibrationError, CalibrationSpec, calibrate
from .dataset import TrialDataset
from .estimators import ALL_KINDS, EstimateValue, EstimatorError, EstimatorKind, estimate
from .nuisance import FitOptions, ModelSpec, NuisanceError, NuisanceValues, fit_nuisances
from .regress import RankDeficientError


class InferenceError(RuntimeError):
    pass


# replicate-level failures that are skipped and counted
REPLICATE_ERRORS = (NuisanceError, CalibrationError, EstimatorError, RankDeficientError, np.linalg.LinAlgError,
                    FloatingPointError, ZeroDivisionError)


def eif_variance(phi: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=float)
    return float(np.sum(phi ** 2) / phi.size ** 2)


def z_value(level: float = 0.95) -> float:
    return float(norm.ppf(0.5 + level / 2))


def wald_ci(tau: float, var: float, level: float = 0.95) -> tuple[float, float]:
    if var < 0:
        raise ValueError("variance must be nonnegative")
    half = z_value(level) * math.sqrt(var)
    return tau - half, tau + half


def order_stat(x: np.ndarray, q: float) -> float:
    """k-th smallest value with k = ceil(q * B); the small offset guards against q * B rounding up."""
    x = np.sort(np.asarray(x, dtype=float))
    k = min(max(math.ceil(q * x.size - 1e-9), 1), x.size)
    return float(x[k - 1])


def percentile_ci(replicates: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    reps = np.asarray(replicates, dtype=float)
    if reps.size < 2:
        raise InferenceError("percentile interval needs at least 2 replicates")
    alpha = 1 - level
    return order_stat(reps, alpha / 2), order_stat(reps, 1 - alpha / 2)


def symmetric_t_ci(tau: float, var: float, rep_tau: np.ndarray, rep_var: np.ndarray,
                   level: float = 0.95) -> tuple[float, float, int]:
    """Interval tau +/- c* sqrt(var); c* is the level quantile of |T*|.

    Returns (lo, hi, dropped) where ``dropped`` counts zero-variance replicates.
    """
    rep_tau = np.asarray(rep_tau, dtype=float)
    rep_var = np.asarray(rep_var, dtype=float)
    ok = rep_var > 0
    if not ok.any():
        if np.all(rep_tau == tau):
            return tau, tau, int((~ok).sum())
        raise InferenceError("every bootstrap replicate has zero variance")
    tstar = np.abs(rep_tau[ok] - tau) / np.sqrt(rep_var[ok])
    c = order_stat(tstar, level)
    half = c * math.sqrt(var)
    return tau - half, tau + half, int((~ok).sum())


# ---------------------------------------------------------------------------
# analysis pipeline


@dataclass(frozen=True)
class Analysis:
    """Full refit closure: nuisances, optional calibration, estimators."""

    spec: ModelSpec = ModelSpec()
    opts: FitOptions = FitOptions()
    calibration: CalibrationSpec | None = CalibrationSpec()
    kinds: tuple = ALL_KINDS

    def __call__(self, ds: TrialDataset) -> dict:
        ns = fit_nuisances(ds, self.spec, self.opts)
        return self.from_values(ds, ns.values, ns.diagnostics)

    def from_values(self, ds: TrialDataset, values: NuisanceValues, diags=()) -> dict:
        bundle = None
        if EstimatorKind.EifC in self.kinds:
            if self.calibration is None:
                raise EstimatorError("calibrated estimator requested without a calibration spec")
            bundle = calibrate(ds, self.calibration)
        out = {}
        for k in self.kinds:
            est = estimate(ds, values, k, bundle)
            extra = tuple(diags) + (bundle.diagnostics if bundle is not None and k is EstimatorKind.EifC else ())
            out[k] = EstimateValue(tau=est.tau, kind=k, contributions=est.contributions, name=est.name,
                                   diagnostics=est.diagnostics + extra)
        return out


@dataclass(frozen=True)
class BootstrapResult:
    keys: tuple
    tau: np.ndarray        # (B_eff, k)
    var: np.ndarray        # (B_eff, k) plug-in influence variance of each replicate
    failures: int
    requested: int
    messages: tuple[str, ...] = ()


def replicate_rng(seed: int, key: tuple) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def bootstrap_indices(n: int, seed: int, key: tuple) -> np.ndarray:
    return replicate_rng(seed, key).integers(0, n, size=n)


def _one_replicate(args):
    ds, pipeline, seed, key = args
    idx = bootstrap_indices(ds.n, seed, key)
    try:
        res = pipeline(ds.subset(idx))
    except REPLICATE_ERRORS as exc:
        return None, f"replicate {key}: {exc}"
    keys = tuple(res)
    tau = np.array([res[k].tau for k in keys])
    var = np.array([eif_variance(res[k].phi) for k in keys])
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(var))):
        return None, f"replicate {key}: non-finite estimate"
    return (keys, tau, var), None


def bootstrap(ds: TrialDataset, pipeline: Callable[[TrialDataset], dict], B: int, seed: int,
              key: tuple = (), max_fail: float = 0.2, workers: int = 1) -> BootstrapResult:
    """Subject-level nonparametric bootstrap with per-replicate RNG substreams.

    Replicate b draws its indices from SeedSequence(seed, spawn_key=key + (b,)),
    so results do not depend on ``workers``.
    """
    if B < 2:
        raise InferenceError("bootstrap needs B >= 2")
    jobs = [(ds, pipeline, seed, tuple(key) + (b,)) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replicate, jobs, chunksize=max(1, B // (4 * workers))))
    else:
        results = [_one_replicate(j) for j in jobs]
    good = [r for r, _ in results if r is not None]
    msgs = tuple(m for _, m in results if m is not None)
    failures = B - len(good)
    if failures > max_fail * B:
        raise InferenceError(f"{failures} of {B} bootstrap replicates failed (limit {max_fail:.0%}); "
                             f"first failure: {msgs[0] if msgs else 'unknown'}")
    if not good:
        raise InferenceError("no bootstrap replicate succeeded")
    keys = good[0][0]
    return BootstrapResult(keys=keys, tau=np.array([g[1] for g in good]), var=np.array([g[2] for g in good]),
                           failures=failures, requested=B, messages=msgs)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class InferenceConfig:
    """Variance and interval choices.

    ``ci="auto"`` follows the simulation design: with one follow-up time every
    estimator gets a bootstrap variance and a Wald interval; with several,
    EIF-family estimators get the influence-function variance with a
    symmetric-t interval and the others a bootstrap variance with a percentile
    interval.
    """

    ci: str = "auto"
    B: int = 100
    level: float = 0.95
    seed: int = 0
    workers: int = 1

    def method_for(self, kind: EstimatorKind, t: int) -> tuple[str, str]:
        """(variance method, interval method)."""
        if self.ci == "auto":
            if t == 1:
                return "bootstrap", "wald"
            return ("eif", "symmetric-t") if kind.is_eif else ("bootstrap", "percentile")
        if self.ci == "wald":
            return ("eif" if kind.is_eif and self.B < 2 else "bootstrap"), "wald"
        if self.ci == "percentile":
            return "bootstrap", "percentile"
        if self.ci in ("symt", "symmetric-t"):
            return ("eif", "symmetric-t") if kind.is_eif else ("bootstrap", "percentile")
        if self.ci == "plugin":
            # nuisances held fixed: sample variance of the per-subject terms
            return "plugin", "wald"
        raise ValueError(f"unknown interval method {self.ci!r}")


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    tau: float
    variance: float
    variance_method: str
    lo: float
    hi: float
    ci_method: str
    level: float = 0.95
    B: int = 0
    failures: int = 0
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    @property
    def length(self) -> float:
        return self.hi - self.lo


def make_report(kind: EstimatorKind, name: str, tau: float, phi: np.ndarray, boot: BootstrapResult | None,
                col: int | None, cfg: InferenceConfig, t: int, diagnostics=()) -> EstimateReport:
    vmethod, cmethod = cfg.method_for(kind, t)
    diags = list(diagnostics)
    if boot is None and (vmethod == "bootstrap" or cmethod in ("percentile", "symmetric-t")):
        raise InferenceError(f"{name}: {vmethod}/{cmethod} inference needs bootstrap replicates (B >= 2)")
    if vmethod in ("eif", "plugin"):
        var = eif_variance(phi)
    else:
        var = float(np.var(boot.tau[:, col], ddof=1))
    if cmethod == "wald":
        lo, hi = wald_ci(tau, var, cfg.level)
    elif cmethod == "percentile":
        lo, hi = percentile_ci(boot.tau[:, col], cfg.level)
    else:
        lo, hi, dropped = symmetric_t_ci(tau, var, boot.tau[:, col], boot.var[:, col], cfg.level)
        if dropped:
            diags.append(f"{dropped} zero-variance bootstrap replicates dropped")
    return EstimateReport(estimator=name, tau=tau, variance=var, variance_method=vmethod, lo=lo, hi=hi,
                          ci_method=cmethod, level=cfg.level, B=0 if boot is None else boot.tau.shape[0],
                          failures=0 if boot is None else boot.failures, diagnostics=tuple(diags))


def needs_bootstrap(kinds, cfg: InferenceConfig, t: int) -> bool:
    for k in kinds:
        v, c = cfg.method_for(k, t)
        if v == "bootstrap" or c != "wald":
            return True
    return False


def analyze(ds: TrialDataset, analysis: Analysis, cfg: InferenceConfig = InferenceConfig(),
            values: NuisanceValues | None = None) -> list[EstimateReport]:
    """Point estimates plus the configured variance and interval for each estimator.

    With ``values`` the nuisances are taken as given (no refitting), which
    rules out bootstrap-based inference.
    """
    if values is None:
        point = analysis(ds)
    else:
        point = analysis.from_values(ds, values)
    boot = None
    if needs_bootstrap(analysis.kinds, cfg, ds.t):
        if values is not None:
            raise InferenceError("bootstrap inference needs fitted nuisances; use plug-in intervals with fixed "
                                 "nuisances")
        boot = bootstrap(ds, analysis, cfg.B, cfg.seed, workers=cfg.workers)
    reports = []
    for k in analysis.kinds:
        est = point[k]
        col = None if boot is None else boot.keys.index(k)
        reports.append(make_report(k, est.name, est.tau, est.phi, boot, col, cfg, ds.t, est.diagnostics))
    return reports


REPORT_COLUMNS = ("estimator", "tau", "se", "lo", "hi", "ci_length", "variance_method", "ci_method", "level", "B",
                  "failures")


def report_row(r: EstimateReport) -> dict:
    return {"estimator": r.estimator, "tau": r.tau, "se": r.se, "lo": r.lo, "hi": r.hi, "ci_length": r.length,
            "variance_method": r.variance_method, "ci_method": r.ci_method, "level": r.level, "B": r.B,
            "failures": r.failures}


def write_reports_csv(reports: list[EstimateReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in reports:
            row = report_row(r)
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_reports_json(reports: list[EstimateReport], path: str | Path) -> None:
    payload = [{**report_row(r), "diagnostics": list(r.diagnostics)} for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def format_table(reports: list[EstimateReport]) -> str:
    """Point estimate, 95% interval and interval length, one line per estimator."""
    lines = [f"{'estimator':<10}{'estimate':>10}{'lower':>10}{'upper':>10}{'length':>10}  interval"]
    for r in reports:
        lines.append(f"{r.estimator:<10}{r.tau:>10.3f}{r.lo:>10.3f}{r.hi:>10.3f}{r.length:>10.3f}  {r.ci_method}")
    return "\n".join(lines)
