"""Simulation designs and the Monte Carlo harness.

Three data-generating processes:

* ``cross_sectional``: one follow-up time, five covariates (four Gaussian, one
  binary) and nonlinear transforms Z of them driving treatment, response and
  outcome;
* ``longitudinal_t2``: the same covariates with two follow-up times;
* ``discrete_oracle``: two binary covariates and discrete outcomes, small
  enough that every population quantity is an exact finite sum.

Metrics labelled "%" in reports are raw values multiplied by 100.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .calibrate import CalibrationSpec, calibrate
from .dataset import TrialDataset
from .estimators import ALL_KINDS, EstimatorKind, estimate
from .inference import (REPLICATE_ERRORS, InferenceConfig, InferenceError, bootstrap, make_report,
                        needs_bootstrap, replicate_rng)
from .nuisance import FitCache, FitOptions, ModelSpec, NuisanceModel, NuisanceValues, delta, fit_nuisances, \
    spline_model

SETTINGS = ("cross_sectional", "longitudinal_t2", "discrete_oracle")

# Pinned population values of the treatment effect for the two continuous
# designs, from scripts/pin_true_tau.py (10^7 draws; Monte Carlo SE given).
TRUE_TAU = {"cross_sectional": 0.06950435214021797, "longitudinal_t2": 0.4306568541329677}
TRUE_TAU_SE = {"cross_sectional": 9.503660439471081e-05, "longitudinal_t2": 0.0003037105857276452}


# ---------------------------------------------------------------------------
# covariate transforms (module level so they pickle and hash)


def z_transform(x: np.ndarray) -> np.ndarray:
    """Z_j = (X_j^2 + 2 sin X_j - 1.5)/sqrt(2) for the Gaussian columns; binary X5 kept."""
    x = np.asarray(x, dtype=float)
    z = x.copy()
    z[:, :4] = (x[:, :4] ** 2 + 2 * np.sin(x[:, :4]) - 1.5) / math.sqrt(2)
    return z


def z_ps_transform(x: np.ndarray) -> np.ndarray:
    """(Z1^2, Z2, ..., Z5): the working propensity inputs of the longitudinal design."""
    z = z_transform(x)
    z[:, 0] = z[:, 0] ** 2
    return z


FEATURES = {"raw": None, "z": z_transform, "z_ps": z_ps_transform}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DiscreteParams:
    """Logistic coefficients of the discrete oracle family (intercept first, then x1, x2, ...)."""

    px: tuple = (0.4, 0.6)
    ps: tuple = (0.2, -0.5, 0.7)
    rp1: tuple = ((0.9, 0.4, -0.6), (0.5, -0.8, 0.3))       # per arm a = 0, 1
    y1: tuple = ((-0.3, 0.8, 0.5), (0.4, 0.6, -0.9))        # P(Y1 = 1) per arm (t = 2)
    rp2: tuple = ((0.7, -0.4, 0.5, 0.9), (0.3, 0.6, -0.2, -1.1))  # on (1, x1, x2, y1)
    # final outcome in {0, 1, 2}: two logits (levels 1 and 2 vs 0) on (1, x1, x2, y1)
    yt: tuple = (((0.1, 0.5, -0.4, 0.8), (-0.6, 0.9, 0.3, 1.2)),
                 ((0.5, -0.3, 0.6, 0.4), (0.2, 0.4, 0.8, -0.5)))


@dataclass(frozen=True)
class DgpConfig:
    setting: str = "cross_sectional"
    n: int = 500
    seed: int = 0
    mean_x: float = 0.25
    ps_coef: float = 0.1
    outcome_sd: float = 1.0
    t: int = 2                    # discrete oracle only
    discrete: DiscreteParams = DiscreteParams()

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.setting == "discrete_oracle" and self.t not in (1, 2):
            raise ValueError("discrete oracle supports t = 1 or 2")


def _covariates(rng, n, mean_x):
    x = np.empty((n, 5))
    x[:, :4] = rng.normal(mean_x, 1.0, size=(n, 4))
    x[:, 4] = rng.binomial(1, 0.5, size=n)
    return x


def gen_cross(cfg: DgpConfig, rng: np.random.Generator | None = None) -> TrialDataset:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.n
    x = _covariates(rng, n, cfg.mean_x)
    z = z_transform(x)
    S = z.sum(axis=1)
    a = rng.binomial(1, expit(cfg.ps_coef * z[:, :4].sum(axis=1)))
    r = rng.binomial(1, expit((2 * a - 1) * S / 6))
    y = (2 + a) * S / 6 + cfg.outcome_sd * rng.normal(size=n)
    y = np.where(r == 1, y, np.nan)
    return TrialDataset(covariates=x, treatment=a, outcomes=y[:, None])


def gen_long(cfg: DgpConfig, rng: np.random.Generator | None = None) -> TrialDataset:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.n
    x = _covariates(rng, n, cfg.mean_x)
    z = z_transform(x)
    S = z.sum(axis=1)
    S4 = z[:, :4].sum(axis=1)
    a = rng.binomial(1, expit(cfg.ps_coef * S4))
    sgn = 2 * a - 1
    r1 = rng.binomial(1, expit(5 * sgn * S4 / 9))
    y1 = (2 + a) * S / 6 + cfg.outcome_sd * rng.normal(size=n)
    r2 = r1 * rng.binomial(1, expit(sgn * (S + 0.1 * y1) / 6))
    y2 = (2 + a) * (S + y1) / 3 + cfg.outcome_sd * rng.normal(size=n)
    out = np.column_stack([np.where(r1 == 1, y1, np.nan), np.where(r2 == 1, y2, np.nan)])
    return TrialDataset(covariates=x, treatment=a, outcomes=out)


# ---------------------------------------------------------------------------
# discrete oracle


class DiscreteOracle:
    """Finite-support design with exact enumeration of the observed-data law."""

    def __init__(self, params: DiscreteParams = DiscreteParams(), t: int = 2):
        self.p = params
        self.t = t

    @staticmethod
    def _lin(coef, *vals):
        return coef[0] + sum(c * v for c, v in zip(coef[1:], vals))

    def px(self, x):
        return np.prod([q if xi == 1 else 1 - q for q, xi in zip(self.p.px, x)])

    def e0(self, x):
        return expit(self._lin(self.p.ps, *x))

    def pi1(self, a, x):
        return expit(self._lin(self.p.rp1[a], *x))

    def py1(self, a, x, y1):
        q = expit(self._lin(self.p.y1[a], *x))
        return q if y1 == 1 else 1 - q

    def pi2(self, a, x, y1):
        return expit(self._lin(self.p.rp2[a], *x, y1))

    def pyt(self, a, x, y1=0.0):
        """Distribution of the final outcome over {0, 1, 2}."""
        eta = [0.0] + [self._lin(c, *x, y1) for c in self.p.yt[a]]
        w = np.exp(eta)
        return w / w.sum()

    def mu_t(self, a, x, y1=0.0):
        return float(np.dot(self.pyt(a, x, y1), [0.0, 1.0, 2.0]))

    # exact nuisance functions -------------------------------------------------

    def mu_h0(self, a, x):
        if self.t == 1:
            return self.mu_t(a, x)
        return sum(self.py1(a, x, y) * self.mu_t(a, x, y) for y in (0, 1))

    def e1(self, x, y1):
        num = self.e0(x) * self.pi1(1, x) * self.py1(1, x, y1)
        den = num + (1 - self.e0(x)) * self.pi1(0, x) * self.py1(0, x, y1)
        return num / den

    def g0(self, x):
        """g_{s+1}^1(H_0) for s = 1..t."""
        if self.t == 1:
            return [self.mu_t(1, x)]
        g2 = sum(self.py1(1, x, y) * (1 - self.pi2(1, x, y)) * self.mu_t(0, x, y) for y in (0, 1))
        g3 = sum(self.py1(1, x, y) * self.pi2(1, x, y) * self.mu_t(1, x, y) for y in (0, 1))
        return [g2, g3]

    def tau_definition(self) -> float:
        """Treated potential outcome under jump to reference minus the control mean, summed exactly."""
        tot = 0.0
        for x in itertools.product((0, 1), repeat=2):
            m0 = self.mu_h0(0, x)
            if self.t == 1:
                treated = self.pi1(1, x) * self.mu_t(1, x) + (1 - self.pi1(1, x)) * m0
            else:
                stay = 0.0
                for y in (0, 1):
                    p2 = self.pi2(1, x, y)
                    stay += self.py1(1, x, y) * (p2 * self.mu_t(1, x, y) + (1 - p2) * self.mu_t(0, x, y))
                treated = self.pi1(1, x) * stay + (1 - self.pi1(1, x)) * m0
            tot += self.px(x) * (treated - m0)
        return tot

    # population rows ----------------------------------------------------------

    def enumerate(self) -> tuple[TrialDataset, np.ndarray]:
        """Every support point of the observed data with its probability."""
        xs, As, ys, ps = [], [], [], []
        for x in itertools.product((0, 1), repeat=2):
            for a in (0, 1):
                pa = self.px(x) * (self.e0(x) if a == 1 else 1 - self.e0(x))
                p1 = self.pi1(a, x)
                if self.t == 1:
                    rows = [((np.nan,), pa * (1 - p1))]
                    rows += [((float(v),), pa * p1 * q) for v, q in enumerate(self.pyt(a, x))]
                else:
                    rows = [((np.nan, np.nan), pa * (1 - p1))]
                    for y1 in (0, 1):
                        q1 = pa * p1 * self.py1(a, x, y1)
                        p2 = self.pi2(a, x, y1)
                        rows.append(((float(y1), np.nan), q1 * (1 - p2)))
                        rows += [((float(y1), float(v)), q1 * p2 * q) for v, q in enumerate(self.pyt(a, x, y1))]
                for y, pr in rows:
                    xs.append(x)
                    As.append(a)
                    ys.append(y)
                    ps.append(pr)
        ds = TrialDataset(covariates=np.array(xs, dtype=float), treatment=np.array(As), outcomes=np.array(ys))
        return ds, np.array(ps)

    def sample(self, n: int, rng: np.random.Generator) -> TrialDataset:
        x = (rng.random((n, 2)) < np.array(self.p.px)).astype(float)
        e = np.array([self.e0(xi) for xi in x])
        a = (rng.random(n) < e).astype(int)
        r1 = rng.random(n) < np.array([self.pi1(ai, xi) for ai, xi in zip(a, x)])
        out = np.full((n, self.t), np.nan)
        u = rng.random((n, 3))
        for i in range(n):
            xi, ai = tuple(x[i]), a[i]
            if not r1[i]:
                continue
            if self.t == 1:
                out[i, 0] = np.searchsorted(np.cumsum(self.pyt(ai, xi)), u[i, 0])
                continue
            y1 = float(u[i, 0] < self.py1(ai, xi, 1))
            out[i, 0] = y1
            if u[i, 1] < self.pi2(ai, xi, y1):
                out[i, 1] = np.searchsorted(np.cumsum(self.pyt(ai, xi, y1)), u[i, 2])
        return TrialDataset(covariates=x, treatment=a, outcomes=np.minimum(out, 2.0))

    def exact_values(self, ds: TrialDataset) -> NuisanceValues:
        """True nuisance functions evaluated at each subject's histories."""
        n, t = ds.n, self.t
        rf = ds.response_full
        e = np.full((n, t), np.nan)
        pi = (np.full((n, t), np.nan), np.full((n, t), np.nan))
        m0 = np.full((n, t + 1), np.nan)
        m1_0 = np.empty(n)
        g = np.empty((n, t))
        for i in range(n):
            x = tuple(ds.covariates[i])
            e[i, 0] = self.e0(x)
            for a in (0, 1):
                pi[a][i, 0] = self.pi1(a, x)
            m0[i, 0] = self.mu_h0(0, x)
            m1_0[i] = self.mu_h0(1, x)
            g[i] = self.g0(x)
            if t == 2 and rf[i, 1]:
                y1 = ds.outcomes[i, 0]
                e[i, 1] = self.e1(x, y1)
                for a in (0, 1):
                    pi[a][i, 1] = self.pi2(a, x, y1)
                m0[i, 1] = self.mu_t(0, x, y1)
            if rf[i, t]:
                m0[i, t] = ds.outcomes[i, t - 1]
        return NuisanceValues(e=e, pi=pi, m0=m0, g=g, delta=delta(e), m1_0=m1_0)


# ---------------------------------------------------------------------------
# true treatment effect


def _tau_cross_chunk(rng, m, cfg):
    z = z_transform(_covariates(rng, m, cfg.mean_x))
    S = z.sum(axis=1)
    return expit(S / 6) * S / 6


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _tau_long_chunk(rng, m, cfg):
    z = z_transform(_covariates(rng, m, cfg.mean_x))
    S = z.sum(axis=1)
    S4 = z[:, :4].sum(axis=1)
    p1 = expit(5 * S4 / 9)
    y1 = S[:, None] / 2 + cfg.outcome_sd * _GH_NODES[None, :]
    p2 = expit((S[:, None] + 0.1 * y1) / 6)
    inner = ((1 - p2) * 2 * (S[:, None] + y1) / 3 + p2 * (S[:, None] + y1)) @ _GH_WEIGHTS
    return p1 * (inner - 8 * S / 9)


def true_tau(cfg: DgpConfig, method: str = "mc_large_n", draws: int = 10 ** 7, seed: int = 20240601,
             chunk: int = 10 ** 6) -> tuple[float, float]:
    """Population treatment effect and its Monte Carlo standard error (0 for enumeration)."""
    if method == "enumeration":
        if cfg.setting != "discrete_oracle":
            raise ValueError("enumeration needs the discrete oracle design")
        return DiscreteOracle(cfg.discrete, cfg.t).tau_definition(), 0.0
    if method != "mc_large_n":
        raise ValueError(f"unknown method {method!r}")
    if cfg.setting == "discrete_oracle":
        return DiscreteOracle(cfg.discrete, cfg.t).tau_definition(), 0.0
    fn = _tau_cross_chunk if cfg.setting == "cross_sectional" else _tau_long_chunk
    rng = np.random.default_rng(seed)
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        v = fn(rng, m, cfg)
        s1 += v.sum()
        s2 += (v ** 2).sum()
        done += m
    mean = s1 / draws
    sd = math.sqrt(max(s2 / draws - mean ** 2, 0.0))
    return mean, sd / math.sqrt(draws)


def reference_tau(cfg: DgpConfig) -> float:
    if cfg.setting == "discrete_oracle":
        return DiscreteOracle(cfg.discrete, cfg.t).tau_definition()
    if cfg.mean_x == 0.25 and cfg.ps_coef == 0.1 and cfg.outcome_sd == 1.0 and TRUE_TAU_SE[cfg.setting] > 0:
        return TRUE_TAU[cfg.setting]
    return true_tau(cfg)[0]


# ---------------------------------------------------------------------------
# model specifications


@dataclass(frozen=True)
class SpecCell:
    ps_correct: bool = True
    rp_correct: bool = True
    om_correct: bool = True

    @property
    def label(self) -> str:
        yn = lambda b: "yes" if b else "no"
        return f"{yn(self.ps_correct)}/{yn(self.rp_correct)}/{yn(self.om_correct)}"

    @property
    def n_correct(self) -> int:
        return int(self.ps_correct) + int(self.rp_correct) + int(self.om_correct)


# table row order: all correct, then one wrong, two wrong, all wrong
GRID = tuple(SpecCell(*c) for c in [(True, True, True), (True, True, False), (True, False, True),
                                      (False, True, True), (True, False, False), (False, True, False),
                                      (False, False, True), (False, False, False)])
LONGITUDINAL_CELL = "longitudinal"


def _param(correct: bool) -> NuisanceModel:
    return NuisanceModel(features=z_transform if correct else None)


def apply_spec_cell(cell: SpecCell | str) -> ModelSpec:
    """Working models for a grid cell: Z inputs when correct, raw X otherwise.

    The longitudinal cell uses additive terms that are linear in the listed
    inputs (plus the outcome history); see ``longitudinal_spec`` for splines.
    """
    if isinstance(cell, str):
        if cell == LONGITUDINAL_CELL:
            return longitudinal_spec()
        if cell.startswith(LONGITUDINAL_CELL + ":spline"):
            return longitudinal_spec(int(cell.rsplit("spline", 1)[1]))
        raise ValueError(f"unknown cell {cell!r}")
    return ModelSpec(ps=_param(cell.ps_correct), rp=_param(cell.rp_correct), om=_param(cell.om_correct))


def longitudinal_spec(n_knots: int = 0) -> ModelSpec:
    """PS on (Z1^2, Z2..Z5), RP on raw X, OM/PM on Z; ``n_knots > 0`` swaps in natural splines."""
    make = (lambda f: spline_model(f, n_knots)) if n_knots > 0 else NuisanceModel
    return ModelSpec(ps=make(z_ps_transform), rp=make(None), om=make(z_transform))


def calibration_for(setting: str) -> CalibrationSpec:
    """Calibration used by the simulation designs.

    With one follow-up time the response weights balance the control arm only;
    with several, both arms are pooled (control-only is infeasible with
    second moments and interactions at this sample size).
    """
    if setting == "cross_sectional":
        return CalibrationSpec(moments="first", features=z_transform, response_arm=0)
    return CalibrationSpec(moments="first2x", features=z_transform)


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True)
class GridPipeline:
    """Refit closure estimating every (cell, estimator) pair on one dataset.

    Nuisance regressions shared between cells are fitted once.
    """

    cells: tuple
    kinds: tuple = ALL_KINDS
    calibration: CalibrationSpec | None = None
    opts: FitOptions = FitOptions()

    def __call__(self, ds: TrialDataset) -> dict:
        cache = FitCache()
        bundle = None
        if EstimatorKind.EifC in self.kinds:
            bundle = calibrate(ds, self.calibration)
        out = {}
        for cell in self.cells:
            ns = fit_nuisances(ds, apply_spec_cell(cell), self.opts, cache)
            for k in self.kinds:
                out[(cell, k)] = estimate(ds, ns.values, k, bundle)
        return out


def generate(cfg: DgpConfig, rng: np.random.Generator) -> TrialDataset:
    if cfg.setting == "cross_sectional":
        return gen_cross(cfg, rng)
    if cfg.setting == "longitudinal_t2":
        return gen_long(cfg, rng)
    return DiscreteOracle(cfg.discrete, cfg.t).sample(cfg.n, rng)


@dataclass(frozen=True)
class McTask:
    cfg: DgpConfig
    pipeline: GridPipeline
    inference: InferenceConfig
    seed: int


def run_replicate(task: McTask, r: int):
    """One Monte Carlo replicate: (keys, array of (tau, se, lo, hi)) or an error message."""
    ds = generate(task.cfg, replicate_rng(task.seed, (r,)))
    t = ds.t
    try:
        point = task.pipeline(ds)
        boot = None
        kinds = task.pipeline.kinds
        if needs_bootstrap(kinds, task.inference, t):
            boot = bootstrap(ds, task.pipeline, task.inference.B, task.seed, key=(r,))
        keys = tuple(point)
        rows = []
        for key in keys:
            est = point[key]
            col = None if boot is None else boot.keys.index(key)
            rep = make_report(key[1], est.name, est.tau, est.phi, boot, col, task.inference, t)
            rows.append((rep.tau, rep.se, rep.lo, rep.hi))
        return keys, np.array(rows), (0 if boot is None else boot.failures), None
    except REPLICATE_ERRORS + (InferenceError,) as exc:
        return None, None, 0, f"replicate {r}: {exc}"


def _run_chunk(args):
    task, rs = args
    return [run_replicate(task, r) for r in rs]


@dataclass(frozen=True)
class SimRow:
    cell: str
    estimator: str
    bias: float
    sd: float
    se: float
    coverage: float
    ci_length: float
    reps: int


@dataclass(frozen=True)
class SimReport:
    rows: tuple[SimRow, ...]
    true_tau: float
    setting: str
    reps_requested: int
    failed_replicates: int = 0
    bootstrap_failures: int = 0
    estimates: dict = field(default_factory=dict, compare=False)
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def row(self, cell: str, estimator: str) -> SimRow:
        for r in self.rows:
            if r.cell == cell and r.estimator == estimator:
                return r
        raise KeyError((cell, estimator))


def _cell_label(cell) -> str:
    return cell if isinstance(cell, str) else cell.label


def run_mc(cfg: DgpConfig, cells=None, kinds=ALL_KINDS, reps: int = 200,
           inference: InferenceConfig | None = None, seed: int = 1, workers: int = 1,
           calibration: CalibrationSpec | None = None, true_value: float | None = None) -> SimReport:
    """Monte Carlo study: generate, fit, estimate, form intervals, aggregate.

    Replicate r draws its data from SeedSequence(seed, spawn_key=(r,)) and its
    bootstrap samples from spawn keys (r, b), so output does not depend on
    ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if cells is None:
        cells = GRID if cfg.setting == "cross_sectional" else (LONGITUDINAL_CELL,)
    if inference is None:
        inference = InferenceConfig(B=100 if cfg.setting == "cross_sectional" else 200)
    if calibration is None:
        calibration = calibration_for(cfg.setting)
    pipe = GridPipeline(cells=tuple(cells), kinds=tuple(kinds), calibration=calibration)
    task = McTask(cfg=cfg, pipeline=pipe, inference=inference, seed=seed)
    if workers > 1:
        chunks = [(task, list(range(r, min(r + 2, reps)))) for r in range(0, reps, 2)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [res for part in ex.map(_run_chunk, chunks) for res in part]
    else:
        results = [run_replicate(task, r) for r in range(reps)]
    truth = reference_tau(cfg) if true_value is None else true_value
    good = [(k, a) for k, a, _, m in results if m is None]
    msgs = tuple(m for _, _, _, m in results if m is not None)
    boot_fail = sum(f for _, _, f, _ in results)
    if not good:
        raise InferenceError("every Monte Carlo replicate failed: " + (msgs[0] if msgs else ""))
    keys = good[0][0]
    arr = np.stack([a for _, a in good])          # (reps, keys, 4)
    rows = []
    estimates = {}
    t = 1 if cfg.setting == "cross_sectional" or (cfg.setting == "discrete_oracle" and cfg.t == 1) else 2
    for j, (cell, kind) in enumerate(keys):
        tau, se, lo, hi = arr[:, j, 0], arr[:, j, 1], arr[:, j, 2], arr[:, j, 3]
        m = len(tau)
        sd = float(np.std(tau, ddof=1)) if m > 1 else float("nan")
        rows.append(SimRow(cell=_cell_label(cell), estimator=kind.label(t), bias=float(tau.mean() - truth), sd=sd,
                           se=float(se.mean()), coverage=float(np.mean((lo <= truth) & (truth <= hi))),
                           ci_length=float(np.mean(hi - lo)), reps=m))
        estimates[(_cell_label(cell), kind.label(t))] = tau
    diags = list(msgs)
    if reps == 1:
        diags.append("reps = 1: Monte Carlo SD undefined")
    return SimReport(rows=tuple(rows), true_tau=truth, setting=cfg.setting, reps_requested=reps,
                     failed_replicates=len(msgs), bootstrap_failures=boot_fail, estimates=estimates,
                     diagnostics=tuple(diags))


SIM_COLUMNS = ("cell", "estimator", "bias", "sd", "se", "coverage", "ci_length", "reps")


def write_sim_csv(report: SimReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SIM_COLUMNS)
        for r in report.rows:
            w.writerow([r.cell, r.estimator] + [repr(getattr(r, c)) for c in SIM_COLUMNS[2:7]] + [r.reps])


def format_sim_table(report: SimReport) -> str:
    """Coverage (%) with mean interval length (%) below it, one block per cell."""
    ests = list(dict.fromkeys(r.estimator for r in report.rows))
    cells = list(dict.fromkeys(r.cell for r in report.rows))
    width = 10
    head = f"{'PS/RP/OM':<14}" + "".join(f"{e:>{width}}" for e in ests)
    lines = [f"true tau = {report.true_tau:.5f}", "Coverage rate (%) and (mean CI length, %)", head]
    for c in cells:
        rs = {r.estimator: r for r in report.rows if r.cell == c}
        lines.append(f"{c:<14}" + "".join(f"{100 * rs[e].coverage:>{width}.1f}" for e in ests))
        lines.append(f"{'':<14}" + "".join(f"{'(' + format(100 * rs[e].ci_length, '.1f') + ')':>{width}}"
                                             for e in ests))
    lines.append("")
    lines.append("Bias (%) and SD (%)")
    lines.append(head)
    for c in cells:
        rs = {r.estimator: r for r in report.rows if r.cell == c}
        lines.append(f"{c:<14}" + "".join(f"{100 * rs[e].bias:>{width}.2f}" for e in ests))
        lines.append(f"{'':<14}" + "".join(f"{'(' + format(100 * rs[e].sd, '.2f') + ')':>{width}}" for e in ests))
    return "\n".join(lines) + "\n"
