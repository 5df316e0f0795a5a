"""Nuisance functions for J2R estimation with monotone dropout.

Histories are indexed by their length: ``H_k = (X, Y_1..Y_k)`` for
``k = 0..t``. In that indexing

* ``e[:, k]``     propensity score e(H_k), defined where R_k = 1,
* ``pi[a][:, k]`` response probability pi_{k+1}(a, H_k), where R_k = 1,
* ``m0[:, k]``    control outcome mean mu_t^0(H_k), where R_k = 1
                  (``m0[:, t]`` is Y_t itself),
* ``g[:, s-1]``   pattern mean g_{s+1}^1(H_0), every subject,
* ``delta[:, k]`` propensity odds ratio delta(H_k), where R_k = 1.

Entries outside their domain are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dataset import TrialDataset
from .regress import (BasisSpec, LinearFit, LogisticFit, LogisticOptions, fit_logistic, fit_ols)


class NuisanceError(RuntimeError):
    """A nuisance regression could not be fitted (empty or single-class subset)."""


@dataclass(frozen=True)
class NuisanceModel:
    """Inputs and basis for one family of regressions.

    ``features`` maps the baseline block to model covariates (``None`` keeps it
    as is); outcome history is appended unchanged when ``history`` is true.
    """

    features: Callable[[np.ndarray], np.ndarray] | None = None
    basis: BasisSpec = BasisSpec()
    history: bool = True
    ridge: float = 0.0

    def design_inputs(self, h: np.ndarray, p: int) -> np.ndarray:
        base = h[:, :p]
        if self.features is not None:
            base = np.asarray(self.features(base), dtype=float)
            if base.ndim == 1:
                base = base[:, None]
        if self.history and h.shape[1] > p:
            return np.column_stack([base, h[:, p:]])
        return base


def spline_model(features=None, n_knots: int = 4, history: bool = True) -> NuisanceModel:
    return NuisanceModel(features=features, basis=BasisSpec.spline(n_knots), history=history, ridge=1e-6)


@dataclass(frozen=True)
class ModelSpec:
    """Per-nuisance models: propensity (ps), response (rp), outcome mean (om), pattern mean (pm)."""

    ps: NuisanceModel = NuisanceModel()
    rp: NuisanceModel = NuisanceModel()
    om: NuisanceModel = NuisanceModel()
    pm: NuisanceModel | None = None

    @property
    def pattern(self) -> NuisanceModel:
        return self.om if self.pm is None else self.pm


@dataclass(frozen=True)
class FitOptions:
    logistic: LogisticOptions = LogisticOptions()
    small_subset_ridge: float = 1e-4

    @property
    def eps_clip(self) -> float:
        return self.logistic.eps_clip


@dataclass(frozen=True)
class FittedNuisance:
    """A fitted regression plus the input map it was trained with."""

    model: NuisanceModel
    fit: LinearFit | LogisticFit
    p: int
    rows: int
    diagnostics: tuple[str, ...] = ()

    def predict(self, h: np.ndarray) -> np.ndarray:
        if h.shape[0] == 0:
            return np.empty(0)
        return self.fit.predict(self.model.design_inputs(h, self.p))


def _fit(model: NuisanceModel, h: np.ndarray, y: np.ndarray, p: int, opts: FitOptions,
         logistic: bool, label: str) -> FittedNuisance:
    if h.shape[0] == 0:
        raise NuisanceError(f"{label}: empty regression subset")
    raw = model.design_inputs(h, p)
    basis = model.basis.fit(raw)
    ridge = model.ridge
    diags = []
    if h.shape[0] < basis.n_columns:
        basis = BasisSpec().fit(raw)
        ridge = max(ridge, opts.small_subset_ridge)
        diags.append(f"{label}: {h.shape[0]} rows for {model.basis} basis; identity basis with ridge {ridge:g}")
    x = basis.transform(raw)
    if logistic:
        lo = replace(opts.logistic, ridge=ridge)
        f = fit_logistic(x, y, lo)
        fit = LogisticFit(coef=f.coef, basis=basis, converged=f.converged, iterations=f.iterations,
                          eps_clip=f.eps_clip, constant=f.constant, diagnostics=f.diagnostics)
    else:
        f = fit_ols(x, y, ridge, fallback_ridge=opts.small_subset_ridge)
        fit = LinearFit(coef=f.coef, basis=basis, ridge=f.ridge, diagnostics=f.diagnostics)
    diags.extend(f"{label}: {d}" for d in fit.diagnostics)
    return FittedNuisance(model=model, fit=fit, p=p, rows=h.shape[0], diagnostics=tuple(diags))


class FitCache:
    """Memo of fits on one dataset, keyed by everything that determines them.

    Lets several model-specification cells share identical regressions.
    """

    def __init__(self):
        self.store: dict = {}

    def get(self, key, make):
        if key not in self.store:
            self.store[key] = make()
        return self.store[key]


def _histories(ds: TrialDataset) -> list[np.ndarray]:
    """Full-sample history matrices H_0..H_t (rows with R_k = 0 hold NaN outcomes)."""
    base = ds.baseline
    return [np.column_stack([base, ds.outcomes[:, :k]]) for k in range(ds.t + 1)]


@dataclass(frozen=True)
class NuisanceValues:
    """Per-subject nuisance evaluations consumed by the estimators."""

    e: np.ndarray
    pi: tuple[np.ndarray, np.ndarray]
    m0: np.ndarray
    g: np.ndarray
    delta: np.ndarray
    m1_0: np.ndarray | None = None

    @property
    def t(self) -> int:
        return self.e.shape[1]

    def pibar0(self) -> np.ndarray:
        """Cumulative control response probability; column k is pibar_k(0) (k = 0..t)."""
        n, t = self.e.shape
        out = np.ones((n, t + 1))
        for k in range(1, t + 1):
            out[:, k] = out[:, k - 1] * self.pi[0][:, k - 1]
        return out


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisance regressions plus their evaluations on the fitting sample."""

    values: NuisanceValues
    e_fits: tuple = ()
    pi_fits: tuple = ()
    mu_fits: tuple = ()
    g_fits: tuple = ()
    spec: ModelSpec | None = None
    diagnostics: tuple[str, ...] = field(default=(), compare=False)


def fit_propensity(ds: TrialDataset, spec: ModelSpec, s: int, opts: FitOptions = FitOptions(),
                   hist: list | None = None) -> FittedNuisance:
    """Logistic fit of A on H_{s-1} among subjects with R_{s-1} = 1."""
    hist = _histories(ds) if hist is None else hist
    rows = ds.response_full[:, s - 1] == 1
    a = ds.treatment[rows]
    if a.size and (a.min() == a.max()):
        raise NuisanceError(f"propensity score at time {s}: only arm {a[0]} observed")
    return _fit(spec.ps, hist[s - 1][rows], a.astype(float), ds.p, opts, True, f"e(H_{s - 1})")


def fit_response(ds: TrialDataset, spec: ModelSpec, s: int, a: int, opts: FitOptions = FitOptions(),
                 hist: list | None = None) -> FittedNuisance:
    """Logistic fit of R_s on H_{s-1} among subjects with R_{s-1} = 1 and A = a."""
    hist = _histories(ds) if hist is None else hist
    rf = ds.response_full
    rows = (rf[:, s - 1] == 1) & (ds.treatment == a)
    return _fit(spec.rp, hist[s - 1][rows], rf[rows, s].astype(float), ds.p, opts, True,
                f"pi_{s}({a}, H_{s - 1})")


def fit_outcome_means(ds: TrialDataset, spec: ModelSpec, a: int, opts: FitOptions = FitOptions(),
                      hist: list | None = None, cache: FitCache | None = None):
    """Backward recursion for mu_t^a.

    Returns the fits (ordered s = t..1) and an ``n x (t+1)`` matrix whose column
    k holds mu_t^a(H_k) for subjects with R_k = 1.
    """
    hist = _histories(ds) if hist is None else hist
    cache = FitCache() if cache is None else cache
    t, rf, p = ds.t, ds.response_full, ds.p
    vals = np.full((ds.n, t + 1), np.nan)
    obs_t = rf[:, t] == 1
    vals[obs_t, t] = ds.outcomes[obs_t, t - 1]
    fits = []
    for s in range(t, 0, -1):
        rows = (rf[:, s] == 1) & (ds.treatment == a)
        target = vals[rows, s]
        fit = cache.get(("mu", a, s, spec.om),
                        lambda: _fit(spec.om, hist[s - 1][rows], target, p, opts, False, f"mu_{t}^{a}(H_{s - 1})"))
        fits.append(fit)
        ev = rf[:, s - 1] == 1
        vals[ev, s - 1] = fit.predict(hist[s - 1][ev])
    return tuple(fits), vals


def fit_pattern_means(ds: TrialDataset, spec: ModelSpec, pi1: np.ndarray, m0: np.ndarray,
                      opts: FitOptions = FitOptions(), hist: list | None = None,
                      cache: FitCache | None = None):
    """Pattern-mean chains g_{s+1}^1, evaluated at H_0 for every subject.

    ``pi1[:, k]`` is pi_{k+1}(1, H_k) and ``m0[:, k]`` is mu_t^0(H_k). The anchor
    of chain s regresses {1 - pi_{s+1}(1, H_s)} mu_t^0(H_s) on H_{s-1} among
    (R_s = 1, A = 1), with pi_{t+1} = 0 and mu_t^0(H_t) = Y_t; each inner level
    regresses pi_{l+1}(1, H_l) g(H_l) on H_{l-1} among (R_l = 1, A = 1).
    """
    hist = _histories(ds) if hist is None else hist
    cache = FitCache() if cache is None else cache
    t, rf, p, n = ds.t, ds.response_full, ds.p, ds.n
    model = spec.pattern
    g0 = np.empty((n, t))
    chains = []
    for s in range(1, t + 1):
        cur = np.full(n, np.nan)
        obs = rf[:, s] == 1
        if s == t:
            cur[obs] = m0[obs, t]
        else:
            cur[obs] = (1.0 - pi1[obs, s]) * m0[obs, s]
        # upstream inputs differ across specs, so they belong in the key
        key = ("g", s, model, spec.rp if (s < t or s > 1) else None, spec.om if s < t else None)
        chain = []
        for l in range(s, 0, -1):
            rows = (rf[:, l] == 1) & (ds.treatment == 1)
            target = cur[rows] if l == s else pi1[rows, l] * cur[rows]
            key = key + (l,)
            fit = cache.get(key, lambda: _fit(model, hist[l - 1][rows], target, p, opts, False,
                                              f"g_{s + 1}^1(H_{l - 1})"))
            chain.append(fit)
            ev = rf[:, l - 1] == 1
            nxt = np.full(n, np.nan)
            nxt[ev] = fit.predict(hist[l - 1][ev])
            cur = nxt
        g0[:, s - 1] = cur
        chains.append(tuple(chain))
    return tuple(chains), g0


def delta(e: np.ndarray) -> np.ndarray:
    """Odds ratio of e(H_k) against e(H_0), column by column; column 0 is 1 exactly."""
    e0 = e[:, :1]
    out = (e / e0) / ((1.0 - e) / (1.0 - e0))
    out[:, 0] = 1.0
    return out


def fit_nuisances(ds: TrialDataset, spec: ModelSpec = ModelSpec(), opts: FitOptions = FitOptions(),
                  cache: FitCache | None = None) -> NuisanceSet:
    """Fit every nuisance function and evaluate it on ``ds``."""
    cache = FitCache() if cache is None else cache
    hist = _histories(ds)
    t, n, rf = ds.t, ds.n, ds.response_full
    diags: list[str] = []

    e = np.full((n, t), np.nan)
    e_fits = []
    for s in range(1, t + 1):
        f = cache.get(("e", s, spec.ps), lambda: fit_propensity(ds, spec, s, opts, hist))
        ev = rf[:, s - 1] == 1
        e[ev, s - 1] = f.predict(hist[s - 1][ev])
        e_fits.append(f)

    pi = (np.full((n, t), np.nan), np.full((n, t), np.nan))
    pi_fits = []
    for s in range(1, t + 1):
        ev = rf[:, s - 1] == 1
        pair = []
        for a in (0, 1):
            f = cache.get(("pi", s, a, spec.rp), lambda: fit_response(ds, spec, s, a, opts, hist))
            pi[a][ev, s - 1] = f.predict(hist[s - 1][ev])
            pair.append(f)
        pi_fits.append(tuple(pair))

    mu0_fits, m0 = fit_outcome_means(ds, spec, 0, opts, hist, cache)
    mu1_fits, m1 = fit_outcome_means(ds, spec, 1, opts, hist, cache)
    g_fits, g = fit_pattern_means(ds, spec, pi[1], m0, opts, hist, cache)

    for group in (e_fits, *pi_fits, mu0_fits, mu1_fits, *g_fits):
        for f in group:
            diags.extend(f.diagnostics)
    values = NuisanceValues(e=e, pi=pi, m0=m0, g=g, delta=delta(e), m1_0=m1[:, 0])
    return NuisanceSet(values=values, e_fits=tuple(e_fits), pi_fits=tuple(pi_fits),
                       mu_fits=(mu0_fits, mu1_fits), g_fits=g_fits, spec=spec,
                       diagnostics=tuple(dict.fromkeys(diags)))


def constant_nuisances(ds: TrialDataset, e: float, pi1: float, pi0: float, mu1: float, mu0: float) -> NuisanceValues:
    """Nuisances fixed at constants (used for overrides and hand-checkable examples).

    The implied pattern means follow the chain definitions with constant inputs:
    g_{s+1}^1 = pi1^{s-1} (1 - pi1) mu0 for s < t and pi1^{t-1} mu1 for s = t.
    """
    n, t, rf = ds.n, ds.t, ds.response_full
    dom = np.where(rf[:, :t] == 1, 1.0, np.nan)
    m0 = np.where(rf == 1, mu0, np.nan)
    obs_t = rf[:, t] == 1
    m0[obs_t, t] = ds.outcomes[obs_t, t - 1]
    g = np.empty((n, t))
    for s in range(1, t + 1):
        g[:, s - 1] = pi1 ** (s - 1) * ((1 - pi1) * mu0 if s < t else mu1)
    ee = e * dom
    return NuisanceValues(e=ee, pi=(pi0 * dom, pi1 * dom), m0=m0, g=g, delta=delta(ee),
                          m1_0=np.full(n, float(mu1)))


def coefficient_rows(ns: NuisanceSet) -> list[dict]:
    """Flat coefficient listing for reproducibility audits."""
    out = []

    def add(name, f):
        for j, c in enumerate(np.atleast_1d(f.fit.coef)):
            out.append({"nuisance": name, "index": j, "coef": float(c), "rows": f.rows})

    for s, f in enumerate(ns.e_fits, start=1):
        add(f"e_{s}", f)
    for s, pair in enumerate(ns.pi_fits, start=1):
        for a, f in enumerate(pair):
            add(f"pi_{s}_{a}", f)
    t = len(ns.e_fits)
    for a, fits in enumerate(ns.mu_fits):
        for f, s in zip(fits, range(t, 0, -1)):
            add(f"mu{a}_{s}", f)
    for s, chain in enumerate(ns.g_fits, start=1):
        for f, l in zip(chain, range(s, 0, -1)):
            add(f"g{s + 1}_{l}", f)
    return out
