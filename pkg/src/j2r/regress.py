"""Regression kernels shared by every nuisance fit.

Least squares (optionally ridge-penalized), logistic regression by IRLS, and
deterministic basis expansions (polynomial, natural cubic spline, saturated
cell indicators) that stand in for additive-model smoothers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logit


class RankDeficientError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# basis expansion


@dataclass(frozen=True)
class BasisSpec:
    """How raw columns are expanded before a linear/logistic fit.

    ``default`` applies to every column unless overridden in ``columns``
    (pairs ``(index, kind)``):
    ``"identity"``, ``("poly", d)`` or ``("ncs", k)`` (natural cubic spline with
    ``k`` interior knots at training quantiles). Columns with two or fewer
    distinct training values always use the identity. ``saturated`` replaces
    everything with one indicator per distinct training row.
    """

    default: object = "identity"
    columns: tuple = ()
    interactions: tuple = ()
    saturated: bool = False

    @classmethod
    def linear(cls) -> "BasisSpec":
        return cls()

    @classmethod
    def spline(cls, n_knots: int = 4) -> "BasisSpec":
        return cls(default=("ncs", n_knots))

    def kind_for(self, j: int):
        return dict(self.columns).get(j, self.default)

    def fit(self, train: np.ndarray) -> "FittedBasis":
        train = np.atleast_2d(np.asarray(train, dtype=float))
        if train.shape[0] == 0:
            raise ValueError("cannot fit a basis on zero rows")
        if self.saturated:
            cells = np.unique(train, axis=0)
            return FittedBasis(spec=self, parts=(), cells=cells)
        parts = []
        for j in range(train.shape[1]):
            kind = self.kind_for(j)
            x = train[:, j]
            uniq = np.unique(x)
            if kind == "identity" or len(uniq) <= 2:
                parts.append(("identity", None))
            elif kind[0] == "poly":
                parts.append(("poly", int(kind[1])))
            elif kind[0] == "ncs":
                k = int(kind[1])
                probs = np.arange(1, k + 1) / (k + 1)
                inner = _quantiles(np.sort(x), probs)
                knots = np.unique(np.concatenate([[uniq[0]], inner, [uniq[-1]]]))
                parts.append(("ncs", knots))
            else:
                raise ValueError(f"unknown basis kind {kind!r}")
        return FittedBasis(spec=self, parts=tuple(parts), cells=None)


def ncs_columns(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Natural cubic spline basis (without intercept) for one variable.

    Uses the truncated-power construction on the unit-rescaled knot range:
    columns ``u`` and ``d_k(u) - d_{K-1}(u)`` for ``k = 1..K-2``. The result is
    linear outside the boundary knots.
    """
    lo, hi = knots[0], knots[-1]
    width = hi - lo if hi > lo else 1.0
    u = (np.asarray(x, dtype=float) - lo) / width
    kn = (knots - lo) / width
    K = len(kn)
    if K <= 2:
        return u[:, None]
    cube = np.maximum(u[:, None] - kn[None, :], 0.0) ** 3
    d = (cube[:, :-1] - cube[:, -1:]) / (kn[-1] - kn[:-1])
    return np.column_stack([u, d[:, :-1] - d[:, -1:]])


def _quantiles(sorted_x: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # linear interpolation between order statistics (numpy's default rule)
    pos = probs * (len(sorted_x) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(sorted_x) - 1)
    frac = pos - lo
    return sorted_x[lo] + frac * (sorted_x[hi] - sorted_x[lo])


@dataclass(frozen=True)
class FittedBasis:
    spec: BasisSpec
    parts: tuple
    cells: np.ndarray | None

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        n = raw.shape[0]
        if self.cells is not None:
            # row-by-cell equality; unseen rows get an all-zero design row
            eq = np.all(raw[:, None, :] == self.cells[None, :, :], axis=2)
            return eq.astype(float)
        cols = [np.ones((n, 1))]
        for j, (kind, info) in enumerate(self.parts):
            x = raw[:, j]
            if kind == "identity":
                cols.append(x[:, None])
            elif kind == "poly":
                cols.append(np.column_stack([x ** d for d in range(1, info + 1)]))
            else:
                cols.append(ncs_columns(x, info))
        for i, j in self.spec.interactions:
            cols.append((raw[:, i] * raw[:, j])[:, None])
        return np.hstack(cols)

    @property
    def n_columns(self) -> int:
        if self.cells is not None:
            return len(self.cells)
        total = 1 + len(self.spec.interactions)
        for kind, info in self.parts:
            if kind == "identity":
                total += 1
            elif kind == "poly":
                total += info
            else:
                total += max(len(info) - 1, 1)
        return total


def expand_basis(spec: BasisSpec, raw: np.ndarray, training: np.ndarray | FittedBasis | None = None) -> np.ndarray:
    """Expand ``raw`` using knots learned from ``training`` (defaults to ``raw``)."""
    if isinstance(training, FittedBasis):
        fb = training
    else:
        fb = spec.fit(raw if training is None else training)
    return fb.transform(raw)


# ---------------------------------------------------------------------------
# least squares


def _penalty_mask(design: np.ndarray) -> np.ndarray:
    # all-ones columns (intercepts) are never penalized
    return ~np.all(design == 1.0, axis=0)


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    basis: FittedBasis | None = None
    ridge: float = 0.0
    diagnostics: tuple[str, ...] = ()

    def predict(self, raw: np.ndarray) -> np.ndarray:
        x = raw if self.basis is None else self.basis.transform(raw)
        return np.asarray(x, dtype=float) @ self.coef


def fit_ols(design: np.ndarray, y: np.ndarray, ridge: float = 0.0,
            fallback_ridge: float | None = None) -> LinearFit:
    """Minimize ||y - X b||^2 + ridge * ||b_penalized||^2.

    A rank-deficient design with ``ridge == 0`` raises
    :class:`RankDeficientError` unless ``fallback_ridge`` is given, in which
    case the fit is redone with that penalty and the event is recorded.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("design rows must match response length")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge == 0:
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank == x.shape[1]:
            return LinearFit(coef=coef)
        if fallback_ridge is None:
            raise RankDeficientError(
                f"design has rank {rank} < {x.shape[1]} columns; use a positive ridge penalty")
        fit = fit_ols(x, y, fallback_ridge)
        return LinearFit(coef=fit.coef, ridge=fallback_ridge,
                         diagnostics=(f"rank-deficient design (rank {rank}); refit with ridge {fallback_ridge:g}",))
    pen = np.diag(_penalty_mask(x).astype(float) * ridge)
    coef = np.linalg.solve(x.T @ x + pen, x.T @ y)
    return LinearFit(coef=coef, ridge=ridge)


# ---------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True)
class LogisticOptions:
    tol: float = 1e-8
    max_iter: int = 100
    eps_clip: float = 0.01
    fallback_ridge: float = 1e-4
    ridge: float = 0.0


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    basis: FittedBasis | None = None
    converged: bool = True
    iterations: int = 0
    eps_clip: float = 0.01
    constant: float | None = None
    diagnostics: tuple[str, ...] = ()

    def linear_predictor(self, raw: np.ndarray) -> np.ndarray:
        x = raw if self.basis is None else self.basis.transform(raw)
        return np.asarray(x, dtype=float) @ self.coef

    def predict(self, raw: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            return np.full(np.atleast_2d(raw).shape[0], self.constant)
        p = expit(self.linear_predictor(raw))
        return np.clip(p, self.eps_clip, 1.0 - self.eps_clip)


def _loglik(x, y, beta, pen):
    eta = x @ beta
    return np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * beta ** 2)


def _irls(x, y, ridge, tol, max_iter):
    pen = _penalty_mask(x).astype(float) * ridge
    beta = np.zeros(x.shape[1])
    ll = _loglik(x, y, beta, pen)
    for it in range(1, max_iter + 1):
        eta = x @ beta
        p = expit(eta)
        w = p * (1.0 - p)
        grad = x.T @ (y - p) - pen * beta
        hess = (x.T * w) @ x + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # step halving keeps the penalized likelihood nondecreasing
        for _ in range(30):
            cand = beta + step
            ll_new = _loglik(x, y, cand, pen)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            step = step / 2
        beta, ll = cand, ll_new
        if np.max(np.abs(step)) < tol:
            return beta, True, it
    return beta, False, max_iter


def fit_logistic(design: np.ndarray, y: np.ndarray, opts: LogisticOptions = LogisticOptions()) -> LogisticFit:
    """Bernoulli maximum likelihood by iteratively reweighted least squares."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("logistic fit needs at least one row")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic response must be binary")
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        c = float(np.clip(ybar, opts.eps_clip, 1 - opts.eps_clip))
        coef = np.zeros(x.shape[1])
        return LogisticFit(coef=coef, eps_clip=opts.eps_clip, constant=c,
                           diagnostics=(f"response is constant ({ybar:g}); clipped constant fit {c:g}",))
    beta, conv, it = _irls(x, y, opts.ridge, opts.tol, opts.max_iter)
    diags = []
    separated = (not conv) or np.max(np.abs(x @ beta)) > 30.0
    if separated and opts.fallback_ridge > opts.ridge:
        beta, conv, it2 = _irls(x, y, opts.fallback_ridge, opts.tol, opts.max_iter)
        it += it2
        diags.append(f"possible separation; refit with ridge {opts.fallback_ridge:g}")
    return LogisticFit(coef=beta, converged=conv, iterations=it, eps_clip=opts.eps_clip,
                       diagnostics=tuple(diags))


# ---------------------------------------------------------------------------
# convenience wrappers taking raw inputs plus a basis


def fit_linear_model(raw: np.ndarray, y: np.ndarray, basis: BasisSpec, ridge: float = 0.0,
                     fallback_ridge: float | None = 1e-4) -> LinearFit:
    fb = basis.fit(raw)
    fit = fit_ols(fb.transform(raw), y, ridge, fallback_ridge)
    return LinearFit(coef=fit.coef, basis=fb, ridge=fit.ridge, diagnostics=fit.diagnostics)


def fit_logistic_model(raw: np.ndarray, y: np.ndarray, basis: BasisSpec,
                       opts: LogisticOptions = LogisticOptions()) -> LogisticFit:
    fb = basis.fit(raw)
    fit = fit_logistic(fb.transform(raw), y, opts)
    return LogisticFit(coef=fit.coef, basis=fb, converged=fit.converged, iterations=fit.iterations,
                       eps_clip=fit.eps_clip, constant=fit.constant, diagnostics=fit.diagnostics)


@dataclass(frozen=True)
class ConstantFit:
    """Fit returning a fixed value; used for user-supplied nuisance overrides."""

    value: float

    def predict(self, raw: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(raw).shape[0], float(self.value))


def logit_clipped(p: float, eps: float) -> float:
    return float(logit(np.clip(p, eps, 1 - eps)))


__all__: Sequence[str] = [
    "BasisSpec", "FittedBasis", "LinearFit", "LogisticFit", "LogisticOptions", "ConstantFit",
    "RankDeficientError", "expand_basis", "fit_ols", "fit_logistic", "fit_linear_model",
    "fit_logistic_model", "ncs_columns",
]
