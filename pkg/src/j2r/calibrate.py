"""Entropy-balancing calibration weights.

Solves  min sum_{i in S} (w_i - 1) log(w_i - 1) - w_i  subject to
sum_{i in S} w_i h_i = scale * target  (and sum w_i = scale)
through its smooth dual, whose stationarity condition gives
w_i = 1 + exp(lambda' h_i).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import TrialDataset


class CalibrationError(RuntimeError):
    """Newton iterations did not reach the residual tolerance."""

    def __init__(self, msg: str, residual: float):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class CalibrationProblem:
    """Balance ``moments`` (rows aligned with ``subset``) to a reference.

    ``target`` is the per-capita reference mean of the moments and ``scale`` the
    reference size, so the constraints read sum_S w h = scale * target. With
    ``include_count`` a leading constraint sum_S w = scale is added.
    """

    subset: np.ndarray
    moments: np.ndarray
    target: np.ndarray
    scale: float
    include_count: bool = True

    def __post_init__(self):
        h = np.asarray(self.moments, dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        object.__setattr__(self, "moments", h)
        object.__setattr__(self, "subset", np.asarray(self.subset))
        object.__setattr__(self, "target", np.atleast_1d(np.asarray(self.target, dtype=float)))
        if h.shape[0] != len(self.subset):
            raise ValueError("moment rows must align with the subset")
        if h.shape[1] != self.target.shape[0]:
            raise ValueError("target length must equal the number of moment columns")
        if not np.all(np.isfinite(self.target)) or not np.all(np.isfinite(h)):
            raise ValueError("moments and target must be finite")
        if h.shape[1] + self.include_count < 1:
            raise ValueError("need at least one constraint")

    def augmented(self) -> tuple[np.ndarray, np.ndarray]:
        """Constraint matrix and totals, count column first when included."""
        h, tot = self.moments, self.scale * self.target
        if self.include_count:
            h = np.column_stack([np.ones(h.shape[0]), h])
            tot = np.concatenate([[self.scale], tot])
        return h, tot


@dataclass(frozen=True)
class WeightSet:
    subset: np.ndarray
    weights: np.ndarray
    lam: np.ndarray
    residual: float
    iterations: int
    trace: tuple[float, ...] = ()
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def full(self, n: int) -> np.ndarray:
        """Weights scattered to length ``n`` with zeros outside the subset."""
        out = np.zeros(n)
        out[self.subset] = self.weights
        return out


def _standardize(h: np.ndarray, has_count: bool) -> np.ndarray:
    """Invertible column map M with h @ M centered/scaled (centering needs a count column)."""
    m = h.shape[1]
    M = np.eye(m)
    start = 1 if has_count else 0
    for j in range(start, m):
        col = h[:, j]
        c = col.mean() if has_count else 0.0
        d = np.sqrt(np.mean((col - c) ** 2))
        if not d > 0:
            d = max(abs(c), 1.0)
        M[j, j] = 1.0 / d
        if has_count:
            M[0, j] = -c / d
    return M


def _dual(hs, tot_s, lam):
    u = hs @ lam
    eu = np.exp(np.minimum(u, 700.0))
    return np.sum(eu + u) - lam @ tot_s, eu


def _newton_step(hs, tot_s, w, eu):
    grad = hs.T @ w - tot_s
    hess = (hs.T * eu) @ hs
    try:
        return -np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(hess, grad, rcond=None)[0]


def solve_entropy_weights(problem: CalibrationProblem, tol: float = 1e-8, max_iter: int = 100) -> WeightSet:
    """Damped Newton on the dual; residual is measured on the original scale."""
    h, tot = problem.augmented()
    k = h.shape[0]
    if k == 0:
        raise CalibrationError("empty calibration subset", np.inf)
    if problem.include_count and k >= problem.scale:
        # every weight must exceed 1, so sum w = scale is unattainable; the
        # infimum is the boundary w = 1 (reached as lambda -> -infinity)
        w = np.ones(k)
        res = float(np.max(np.abs(h.T @ w - tot)))
        return WeightSet(subset=problem.subset, weights=w, lam=np.full(h.shape[1], -np.inf), residual=res,
                         iterations=0, diagnostics=(f"subset size {k} is not below reference size "
                                                    f"{problem.scale:g}; weights set to 1",))
    M = _standardize(h, problem.include_count)
    hs, tot_s = h @ M, M.T @ tot
    lam = np.zeros(hs.shape[1])
    if problem.include_count:
        # start from the uniform weights that satisfy the count constraint
        lam[0] = np.log(problem.scale / k - 1.0)
    obj, eu = _dual(hs, tot_s, lam)
    trace = [obj]
    best = np.inf
    for it in range(1, max_iter + 1):
        w = 1.0 + eu
        res = float(np.max(np.abs(h.T @ w - tot)))
        best = min(best, res)
        step = _newton_step(hs, tot_s, w, eu)
        if res <= tol:
            # one undamped polishing step; quadratic convergence makes it nearly free accuracy
            cand = lam + step
            obj_new, eu_new = _dual(hs, tot_s, cand)
            w_new = 1.0 + eu_new
            res_new = float(np.max(np.abs(h.T @ w_new - tot)))
            if res_new <= res:
                lam, w, res = cand, w_new, res_new
                trace.append(obj_new)
            return WeightSet(subset=problem.subset, weights=w, lam=M @ lam, residual=res,
                             iterations=it - 1, trace=tuple(trace))
        accepted = False
        # near the optimum the dual changes by less than its rounding error
        slack = 64 * np.finfo(float).eps * (abs(obj) + float(np.sum(eu)) + 1.0)
        for _ in range(31):
            cand = lam + step
            obj_new, eu_new = _dual(hs, tot_s, cand)
            if obj_new <= obj + slack:
                accepted = True
                break
            step = step / 2
        if not accepted:
            break
        lam, obj, eu = cand, obj_new, eu_new
        trace.append(obj)
    w = 1.0 + eu
    res = float(np.max(np.abs(h.T @ w - tot)))
    best = min(best, res)
    if res <= tol:
        return WeightSet(subset=problem.subset, weights=w, lam=M @ lam, residual=res,
                         iterations=len(trace) - 1, trace=tuple(trace))
    raise CalibrationError(
        f"calibration did not converge: best constraint residual {best:.3g} > {tol:g}; "
        "the target may lie outside the achievable moment set, try fewer moments", best)


# ---------------------------------------------------------------------------
# moment construction


MOMENTS = ("first", "first2", "first2x")


def moment_features(z: np.ndarray, moments: str = "first") -> np.ndarray:
    """Columns z, optionally squares and pairwise products.

    Squares of binary columns equal the column itself and are skipped, as are
    constant columns (the count constraint already covers them).
    """
    if moments not in MOMENTS:
        raise ValueError(f"moments must be one of {MOMENTS}, got {moments!r}")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    p = z.shape[1]
    cols = [z[:, j] for j in range(p)]
    if moments in ("first2", "first2x"):
        cols += [z[:, j] ** 2 for j in range(p) if not np.array_equal(z[:, j] ** 2, z[:, j])]
    if moments == "first2x":
        cols += [z[:, i] * z[:, j] for i in range(p) for j in range(i + 1, p)]
    kept = [c for c in cols if not (c.size and np.all(c == c[0]))]
    return np.column_stack(kept) if kept else np.empty((z.shape[0], 0))


def moment_count(p: int, moments: str) -> int:
    """Number of moment columns for p non-binary, non-collinear inputs."""
    return {"first": p, "first2": 2 * p, "first2x": 2 * p + p * (p - 1) // 2}[moments]


def _history_inputs(ds: TrialDataset, s: int, features, history: bool) -> np.ndarray:
    base = ds.baseline
    if features is not None:
        base = np.asarray(features(base), dtype=float)
        if base.ndim == 1:
            base = base[:, None]
    if history and s > 1:
        return np.column_stack([base, ds.outcomes[:, : s - 1]])
    return base


def build_treatment_targets(ds: TrialDataset, arm: int, moments: str = "first",
                            features: Callable | None = None) -> CalibrationProblem:
    """S = {A = arm}; the reference is the whole sample."""
    h = moment_features(_history_inputs(ds, 1, features, False), moments)
    rows = np.flatnonzero(ds.treatment == arm)
    return CalibrationProblem(subset=rows, moments=h[rows], target=h.mean(axis=0), scale=float(ds.n))


def build_sequential_response_targets(ds: TrialDataset, s: int, moments: str = "first",
                                      features: Callable | None = None, history: bool = True,
                                      arm: int | None = None) -> CalibrationProblem:
    """S = {R_s = 1}; the reference is {R_{s-1} = 1}; h is built from H_{s-1}.

    With ``arm`` both sets are further restricted to A = arm.
    """
    rf = ds.response_full
    ref = rf[:, s - 1] == 1
    sub = rf[:, s] == 1
    if arm is not None:
        ref &= ds.treatment == arm
        sub &= ds.treatment == arm
    ref_rows = np.flatnonzero(ref)
    x = _history_inputs(ds, s, features, history)[ref_rows]
    h = moment_features(x, moments)
    rows = np.flatnonzero(sub)
    pos = np.searchsorted(ref_rows, rows)
    return CalibrationProblem(subset=rows, moments=h[pos], target=h.mean(axis=0), scale=float(len(ref_rows)))


@dataclass(frozen=True)
class CalibrationSpec:
    """Which moments are balanced and how response weights are grouped.

    ``response_arm`` restricts the response calibration to one arm (``None``
    pools both arms).
    """

    moments: str = "first"
    features: Callable | None = None
    history: bool = True
    response_arm: int | None = None
    tol: float = 1e-8
    max_iter: int = 100


@dataclass(frozen=True)
class CalibrationBundle:
    """Treatment weights w_a1, w_a0 and response weights w_r1..w_rt (length n, zero off-subset)."""

    w_a1: np.ndarray
    w_a0: np.ndarray
    w_r: np.ndarray
    sets: tuple[WeightSet, ...] = ()
    diagnostics: tuple[str, ...] = field(default=(), compare=False)


def calibrate(ds: TrialDataset, spec: CalibrationSpec = CalibrationSpec()) -> CalibrationBundle:
    n = ds.n
    sets, diags = [], []
    wa = []
    for arm in (1, 0):
        ws = solve_entropy_weights(build_treatment_targets(ds, arm, spec.moments, spec.features), spec.tol,
                                   spec.max_iter)
        sets.append(ws)
        diags += [f"w_a{arm}: {d}" for d in ws.diagnostics]
        wa.append(ws.full(n))
    wr = np.zeros((n, ds.t))
    for s in range(1, ds.t + 1):
        prob = build_sequential_response_targets(ds, s, spec.moments, spec.features, spec.history, spec.response_arm)
        ws = solve_entropy_weights(prob, spec.tol, spec.max_iter)
        sets.append(ws)
        diags += [f"w_r{s}: {d}" for d in ws.diagnostics]
        wr[:, s - 1] = ws.full(n)
    return CalibrationBundle(w_a1=wa[0], w_a0=wa[1], w_r=wr, sets=tuple(sets), diagnostics=tuple(diags))


def weight_rows(ds: TrialDataset, values, bundle: CalibrationBundle | None) -> list[dict]:
    """Per-subject inverse-probability and calibrated weights, each normalized to mean 1 over its set.

    ``values`` is a :class:`~j2r.nuisance.NuisanceValues`.
    """
    rows = []
    a = ds.treatment
    rf = ds.response_full
    e0 = values.e[:, 0]
    pibar = values.pibar0()

    def emit(kind, mask, w):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return
        norm = w[idx] / np.mean(w[idx])
        for i, wi, ni in zip(idx, w[idx], norm):
            rows.append({"subject": int(i), "weight_type": kind, "weight": float(wi), "normalized": float(ni)})

    emit("ipw_a1", a == 1, 1.0 / e0)
    emit("ipw_a0", a == 0, 1.0 / (1.0 - e0))
    for s in range(1, ds.t + 1):
        emit(f"ipw_a0_r{s}", (a == 0) & (rf[:, s] == 1), 1.0 / ((1.0 - e0) * pibar[:, s]))
    if bundle is not None:
        emit("cal_a1", a == 1, bundle.w_a1)
        emit("cal_a0", a == 0, bundle.w_a0)
        prod = bundle.w_a0.copy()
        for s in range(1, ds.t + 1):
            prod = prod * bundle.w_r[:, s - 1]
            emit(f"cal_a0_r{s}", (a == 0) & (rf[:, s] == 1), prod)
    return rows


WEIGHT_COLUMNS = ("subject", "weight_type", "weight", "normalized")


def write_weights_csv(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=WEIGHT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "weight": repr(r["weight"]), "normalized": repr(r["normalized"])})
