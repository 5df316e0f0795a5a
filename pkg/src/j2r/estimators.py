"""Point estimators of the J2R average treatment effect.

Every estimator returns per-subject contributions ``c`` with the estimate
equal to their (frequency-weighted) mean. For ratio-normalized estimators the
contributions carry the normalizing denominators.

Cross-sectional (t = 1) names are used when ``t == 1``: rp-om, tr, tr-N,
tr-C; the longitudinal names are rp-pm, mr, mr-N, mr-C.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .calibrate import CalibrationBundle
from .dataset import TrialDataset
from .nuisance import NuisanceValues


class EstimatorError(ValueError):
    pass


class EstimatorKind(enum.Enum):
    RpPm = "rp-pm"
    PsOm = "ps-om"
    PsOmN = "ps-om-N"
    PsRp = "ps-rp"
    PsRpN = "ps-rp-N"
    Eif = "mr"
    EifN = "mr-N"
    EifC = "mr-C"

    def label(self, t: int) -> str:
        if t == 1:
            return {"rp-pm": "rp-om", "mr": "tr", "mr-N": "tr-N", "mr-C": "tr-C"}.get(self.value, self.value)
        return self.value

    @property
    def is_eif(self) -> bool:
        return self in (EstimatorKind.Eif, EstimatorKind.EifN, EstimatorKind.EifC)

    @classmethod
    def parse(cls, name: str) -> "EstimatorKind":
        key = name.strip().lower()
        alias = {"rp-om": "rp-pm", "tr": "mr", "tr-n": "mr-n", "tr-c": "mr-c", "eif": "mr", "eif-n": "mr-n",
                 "eif-c": "mr-c"}
        key = alias.get(key, key)
        for k in cls:
            if k.value.lower() == key:
                return k
        raise EstimatorError(f"unknown estimator {name!r}; choose from {[k.value for k in cls]} "
                             "or their cross-sectional names rp-om, tr, tr-N, tr-C")


ALL_KINDS = tuple(EstimatorKind)

REQUIRES = {
    EstimatorKind.RpPm: ("pi", "m0", "g"),
    EstimatorKind.PsOm: ("e", "m0"),
    EstimatorKind.PsOmN: ("e", "m0"),
    EstimatorKind.PsRp: ("e", "pi", "delta"),
    EstimatorKind.PsRpN: ("e", "pi", "delta"),
    EstimatorKind.Eif: ("e", "pi", "m0", "g", "delta"),
    EstimatorKind.EifN: ("e", "pi", "m0", "g", "delta"),
    EstimatorKind.EifC: ("e", "pi", "m0", "g", "delta"),
}


@dataclass(frozen=True)
class EstimateValue:
    tau: float
    kind: EstimatorKind
    contributions: np.ndarray
    name: str = ""
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def phi(self) -> np.ndarray:
        """Centered contributions (the estimated influence values for EIF kinds)."""
        return self.contributions - self.tau


class _Mean:
    """Empirical mean, optionally with frequency weights (exact population averages)."""

    def __init__(self, n: int, freq: np.ndarray | None):
        if freq is None:
            self.f = None
            self.total = float(n)
        else:
            self.f = np.asarray(freq, dtype=float)
            self.total = float(self.f.sum())

    def __call__(self, u: np.ndarray) -> float:
        if self.f is None:
            return float(np.sum(u) / self.total)
        return float(np.dot(self.f, u) / self.total)


def _nz(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """x where mask holds, 0 elsewhere (avoids NaN * 0)."""
    return np.where(mask, x, 0.0)


@dataclass
class _Terms:
    """Shared per-subject quantities."""

    A: np.ndarray
    R: np.ndarray       # R_0..R_t
    RY: np.ndarray      # R_t Y_t (0 where absent)
    e0: np.ndarray
    pi1_0: np.ndarray
    m0: np.ndarray      # mu_t^0(H_k), zero where undefined
    ytilde: np.ndarray
    G: np.ndarray
    pibar: np.ndarray   # pibar_k(0), 1 where undefined
    C: np.ndarray       # C_s, s = 1..t (column s-1), zero where R_{s-1} = 0
    inc: np.ndarray     # R_s {mu(H_s) - mu(H_{s-1})}, column s-1


def _terms(ds: TrialDataset, v: NuisanceValues, need: tuple[str, ...]) -> _Terms:
    for name in need:
        if getattr(v, name) is None:
            raise EstimatorError(f"missing required nuisance {name!r}")
    t = ds.t
    A = ds.treatment.astype(float)
    R = ds.response_full
    obs = R == 1
    yt = ds.outcomes[:, t - 1]
    RY = _nz(yt, obs[:, t])
    e0 = v.e[:, 0] if v.e is not None else None
    pi1_0 = v.pi[1][:, 0] if v.pi is not None else None
    m0 = _nz(v.m0, obs) if v.m0 is not None else None
    if m0 is not None:
        ytilde = RY.copy()
        for s in range(1, t + 1):
            ytilde += R[:, s - 1] * (1 - R[:, s]) * m0[:, s - 1]
        inc = np.column_stack([R[:, s] * (m0[:, s] - m0[:, s - 1]) for s in range(1, t + 1)])
    else:
        ytilde = inc = None
    G = v.g.sum(axis=1) if v.g is not None else None
    if v.pi is not None:
        pibar = _nz(v.pibar0(), obs)
        pibar[~obs] = 1.0
    else:
        pibar = None
    if v.pi is not None and v.delta is not None:
        C = np.zeros((ds.n, t))
        run = np.zeros(ds.n)
        for k in range(1, t + 1):
            ok = obs[:, k - 1]
            term = pibar[:, k - 1] * (1.0 - _nz(v.pi[1][:, k - 1], ok)) * _nz(v.delta[:, k - 1], ok)
            run = run + _nz(term, ok)
            C[:, k - 1] = _nz(run - 1.0, ok)
    else:
        C = None
    return _Terms(A=A, R=R, RY=RY, e0=e0, pi1_0=pi1_0, m0=m0, ytilde=ytilde, G=G, pibar=pibar, C=C, inc=inc)


def _weight_diag(label: str, w: np.ndarray, mask: np.ndarray) -> str:
    x = w[mask]
    if x.size == 0:
        return f"{label}: empty"
    x = x / x.mean()
    return f"{label}: max normalized weight {x.max():.3g}, 99th percentile {np.percentile(x, 99):.3g}"


def estimate(ds: TrialDataset, values: NuisanceValues, kind: EstimatorKind | str,
             weights: CalibrationBundle | None = None, freq: np.ndarray | None = None) -> EstimateValue:
    """Estimate the J2R treatment effect with one estimator."""
    kind = EstimatorKind.parse(kind) if isinstance(kind, str) else kind
    if kind is EstimatorKind.EifC and weights is None:
        raise EstimatorError(f"{kind.label(ds.t)} needs calibration weights")
    T = _terms(ds, values, REQUIRES[kind])
    P = _Mean(ds.n, freq)
    t = ds.t
    A = T.A
    diags: list[str] = []

    if kind is EstimatorKind.RpPm:
        c = T.pi1_0 * (T.G - T.m0[:, 0])
    elif kind in (EstimatorKind.PsOm, EstimatorKind.PsOmN, EstimatorKind.PsRp, EstimatorKind.PsRpN,
                  EstimatorKind.Eif, EstimatorKind.EifN):
        wa = A / T.e0
        wc = (1 - A) / (1 - T.e0)
        diags.append(_weight_diag("A/e", wa, A == 1))
        diags.append(_weight_diag("(1-A)/(1-e)", wc, A == 0))
        if kind is EstimatorKind.PsOm:
            c = (wa - wc) * T.ytilde
        elif kind is EstimatorKind.PsOmN:
            c = wa / P(wa) * T.ytilde - wc / P(wc) * T.ytilde
        elif kind in (EstimatorKind.PsRp, EstimatorKind.PsRpN):
            Rt = T.R[:, t]
            ctrl = wc * T.C[:, t - 1] * T.RY / T.pibar[:, t]
            if kind is EstimatorKind.PsRp:
                c = wa * T.RY + ctrl
            else:
                c = wa / P(wa) * T.RY + ctrl / P(wc * Rt / T.pibar[:, t])
        elif kind is EstimatorKind.Eif:
            c = (wa * T.ytilde + (1 - wa) * (T.pi1_0 * T.G + (1 - T.pi1_0) * T.m0[:, 0]) - T.m0[:, 0])
            for s in range(1, t + 1):
                c = c + wc * T.C[:, s - 1] * T.inc[:, s - 1] / T.pibar[:, s]
        else:
            resid = T.ytilde - T.pi1_0 * T.G - (1 - T.pi1_0) * T.m0[:, 0]
            c = wa / P(wa) * resid + T.pi1_0 * (T.G - T.m0[:, 0])
            for s in range(1, t + 1):
                den = P(wc * T.R[:, s] / T.pibar[:, s])
                c = c + wc * T.C[:, s - 1] * T.inc[:, s - 1] / T.pibar[:, s] / den
    else:
        wa1 = A * weights.w_a1
        diags.append(_weight_diag("w_a1", weights.w_a1, A == 1))
        resid = T.ytilde - T.pi1_0 * T.G - (1 - T.pi1_0) * T.m0[:, 0]
        c = wa1 / P(wa1) * resid + T.pi1_0 * (T.G - T.m0[:, 0])
        W = (1 - A) * weights.w_a0
        for s in range(1, t + 1):
            W = W * weights.w_r[:, s - 1]
            Ws = T.R[:, s] * W
            diags.append(_weight_diag(f"w_a0 w_r1..w_r{s}", Ws, Ws > 0))
            c = c + Ws * T.C[:, s - 1] * T.inc[:, s - 1] / P(Ws)
    tau = P(c)
    return EstimateValue(tau=tau, kind=kind, contributions=c, name=kind.label(t), diagnostics=tuple(diags))


def estimate_all(ds: TrialDataset, values: NuisanceValues, kinds=ALL_KINDS,
                 weights: CalibrationBundle | None = None, freq: np.ndarray | None = None) -> dict:
    return {k: estimate(ds, values, k, weights, freq) for k in kinds}


def eif_values(ds: TrialDataset, values: NuisanceValues, freq: np.ndarray | None = None):
    """Centered influence values and the estimate (mean of the uncentered kernel)."""
    est = estimate(ds, values, EstimatorKind.Eif, freq=freq)
    return est.phi, est.tau


# ---------------------------------------------------------------------------
# direct cross-sectional formulas (t = 1), written independently of the
# longitudinal machinery and used to cross-check it


def cross_sectional(kind: str, A, R, Y, e, pi1, pi0, mu1, mu0, w_a1=None, w_a0=None, w_r1=None) -> float:
    """Cross-sectional estimators from per-subject nuisance values.

    ``Y`` may hold anything where ``R == 0``; ``kind`` is one of rp-om, ps-om,
    ps-om-N, ps-rp, ps-rp-N, tr, tr-N, tr-C.
    """
    A = np.asarray(A, dtype=float)
    R = np.asarray(R, dtype=float)
    RY = np.where(R == 1, Y, 0.0)
    Yr = np.where(R == 1, Y, 0.0)
    m = np.mean
    if kind == "rp-om":
        return m(pi1 * (mu1 - mu0))
    if kind == "ps-om":
        return m((2 * A - 1) / (e ** A * (1 - e) ** (1 - A)) * (RY + (1 - R) * mu0))
    if kind == "ps-om-N":
        imp = RY + (1 - R) * mu0
        return m(A / e * imp) / m(A / e) - m((1 - A) / (1 - e) * imp) / m((1 - A) / (1 - e))
    if kind == "ps-rp":
        return m(A / e * RY - (1 - A) / (1 - e) * pi1 / pi0 * RY)
    if kind == "ps-rp-N":
        return (m(A / e * RY) / m(A / e)
                - m((1 - A) / (1 - e) * pi1 / pi0 * RY) / m((1 - A) / (1 - e) * R / pi0))
    resid = R * (Yr - mu0)
    diff = pi1 * (mu1 - mu0)
    if kind == "tr":
        return m((A / e - (1 - A) / (1 - e) * pi1 / pi0) * resid - (A - e) / e * diff)
    if kind == "tr-N":
        return (m(A / e * (resid - diff)) / m(A / e)
                - m((1 - A) / (1 - e) * pi1 / pi0 * resid) / m((1 - A) / (1 - e) * R / pi0)
                + m(diff))
    if kind == "tr-C":
        return (m(A * w_a1 * (resid - diff)) / m(A * w_a1)
                - m((1 - A) * R * w_a0 * w_r1 * pi1 * (Yr - mu0)) / m((1 - A) * R * w_a0 * w_r1)
                + m(diff))
    raise EstimatorError(f"unknown cross-sectional estimator {kind!r}")
