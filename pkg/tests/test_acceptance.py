"""Acceptance gates at desk scale, one PASS/FAIL line per criterion.

The two Monte Carlo studies take roughly 20 minutes together on one core.
Criterion 7 runs only when J2R_HAMD_PATH names a wide CSV produced by
scripts/hamd_to_wide.py (its schema is read from the sibling .schema.json).
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from j2r.calibrate import CalibrationProblem, CalibrationSpec, calibrate, solve_entropy_weights
from j2r.dataset import Schema, load_csv
from j2r.estimators import ALL_KINDS, EstimatorKind as K, cross_sectional, eif_values, estimate
from j2r.inference import Analysis, InferenceConfig, analyze
from j2r.nuisance import ModelSpec, fit_nuisances, spline_model
from j2r.sim import GRID, LONGITUDINAL_CELL, DgpConfig, DiscreteOracle, gen_cross, gen_long, run_mc

CROSS_REPS, CROSS_B = 200, 100
LONG_REPS, LONG_B = 300, 200
UNCALIBRATED = tuple(k for k in ALL_KINDS if k is not K.EifC)


def verdict(capsys, number, checks):
    """Print one line for the criterion, then fail with the broken checks if any."""
    ok = all(c[0] for c in checks)
    detail = "; ".join(c[1] for c in checks)
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, [c[1] for c in checks if not c[0]]


def within(value, target, tol, text):
    return abs(value - target) <= tol, f"{text} {value:.4f} (target {target} +/- {tol})"


@pytest.fixture(scope="module")
def cross_run():
    t0 = time.perf_counter()
    rep = run_mc(DgpConfig(), reps=CROSS_REPS, inference=InferenceConfig(B=CROSS_B), seed=1)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def long_run():
    t0 = time.perf_counter()
    rep = run_mc(DgpConfig("longitudinal_t2"), reps=LONG_REPS, inference=InferenceConfig(B=LONG_B), seed=1)
    return rep, time.perf_counter() - t0


def test_criterion_1_cross_sectional_grid(cross_run, capsys):
    rep, secs = cross_run
    checks = []
    worst = max(abs(rep.row(c.label, e).bias) for c in GRID if c.n_correct >= 2 for e in ("tr", "tr-N", "tr-C"))
    checks.append((worst <= 0.02, f"max |bias| of tr family over cells with >= 2 correct models {worst:.4f} "
                                  f"(limit 0.02)"))
    for e, target in (("tr", 0.947), ("tr-N", 0.947), ("tr-C", 0.944)):
        checks.append(within(rep.row("yes/yes/yes", e).coverage, target, 0.045, f"{e} coverage"))
    checks.append((True, f"{CROSS_REPS} reps, B={CROSS_B}, {secs / 60:.1f} min"))
    verdict(capsys, 1, checks)


def test_criterion_2_misspecification_signatures(cross_run, capsys):
    rep, _ = cross_run
    rp_om = rep.row("yes/yes/no", "rp-om")
    ps_rp = rep.row("yes/no/yes", "ps-rp")
    verdict(capsys, 2, [within(rp_om.bias, 0.156, 0.03, "rp-om bias with OM wrong"),
                        (rp_om.coverage < 0.70, f"rp-om coverage {rp_om.coverage:.3f} (limit < 0.70)"),
                        within(ps_rp.bias, 0.0923, 0.025, "ps-rp bias with RP wrong")])


def test_bootstrap_se_tracks_monte_carlo_sd(cross_run, capsys):
    # supplementary: ps-om bootstrap SE within 30% of the Monte Carlo SD
    row = cross_run[0].row("yes/yes/yes", "ps-om")
    ratio = row.se / row.sd
    verdict(capsys, "1b", [(abs(ratio - 1) <= 0.30, f"ps-om bootstrap SE / MC SD {ratio:.3f} (1 +/- 0.30)")])


def test_criterion_3_longitudinal_table(long_run, capsys):
    rep, secs = long_run
    mr = rep.row(LONGITUDINAL_CELL, "mr")
    verdict(capsys, 3, [within(mr.coverage, 0.942, 0.05, "mr coverage"),
                        within(mr.bias, 0.0076, 0.02, "mr bias"),
                        within(rep.row(LONGITUDINAL_CELL, "rp-pm").bias, -0.135, 0.03, "rp-pm bias"),
                        (rep.row(LONGITUDINAL_CELL, "ps-rp").coverage < 0.35,
                         f"ps-rp coverage {rep.row(LONGITUDINAL_CELL, 'ps-rp').coverage:.3f} (limit < 0.35)"),
                        (secs <= 25 * 60, f"runtime {secs / 60:.1f} min (limit 25)")])


def test_criterion_4_identification_equivalence(capsys):
    checks = []
    for t in (1, 2):
        orc = DiscreteOracle(t=t)
        ds, prob = orc.enumerate()
        v = orc.exact_values(ds)
        truth = orc.tau_definition()
        taus = [estimate(ds, v, k, freq=prob).tau for k in (K.RpPm, K.PsOm, K.PsRp)]
        phi, _ = eif_values(ds, v, freq=prob)
        gap = max(max(abs(x - truth) for x in taus), abs(prob @ phi))
        checks.append((gap <= 1e-10, f"t={t} max gap {gap:.1e}"))
    verdict(capsys, 4, checks)


def test_criterion_5_influence_function(capsys):
    checks = []
    ds = gen_long(DgpConfig("longitudinal_t2"), np.random.default_rng(5))
    phi, _ = eif_values(ds, fit_nuisances(ds).values)
    checks.append((abs(phi.mean()) <= 1e-12, f"centered mean {abs(phi.mean()):.1e}"))

    orc = DiscreteOracle(t=2)
    pop, prob = orc.enumerate()
    phi_pop, _ = eif_values(pop, orc.exact_values(pop), freq=prob)
    v_pop = prob @ phi_pop ** 2
    sample = pop.subset(np.random.default_rng(6).choice(len(prob), size=100_000, p=prob))
    phi_s, _ = eif_values(sample, orc.exact_values(sample))
    rel = abs(np.var(phi_s) / v_pop - 1)
    checks.append((rel <= 0.05, f"variance at n=1e5 off by {100 * rel:.2f}% (limit 5%)"))

    rng = np.random.default_rng(7)
    spec = CalibrationSpec(moments="first", response_arm=0)
    worst = 0.0
    for _ in range(100):
        d = gen_cross(DgpConfig(n=int(rng.integers(150, 400))), rng)
        v = fit_nuisances(d).values
        b = calibrate(d, spec)
        args = dict(A=d.treatment, R=d.response[:, 0], Y=np.nan_to_num(d.outcomes[:, 0]), e=v.e[:, 0],
                    pi1=v.pi[1][:, 0], pi0=v.pi[0][:, 0], mu1=v.g[:, 0], mu0=v.m0[:, 0], w_a1=b.w_a1,
                    w_a0=b.w_a0, w_r1=b.w_r[:, 0])
        for k in ALL_KINDS:
            worst = max(worst, abs(estimate(d, v, k, b).tau - cross_sectional(k.label(1), **args)))
    checks.append((worst <= 1e-12, f"one-time reduction max gap {worst:.1e} over 100 datasets"))
    verdict(capsys, 5, checks)


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_6_calibration_solver(capsys):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        k, m = int(rng.integers(20, 501)), int(rng.integers(1, 11))
        h = rng.normal(size=(k, m)) * rng.uniform(0.5, 3, size=m) + rng.normal(size=m)
        w = 1 + np.exp(rng.normal() * 0.5 + (h - h.mean(0)) @ (rng.normal(size=m) * 0.3 / np.sqrt(m)))
        worst = max(worst, solve_entropy_weights(CalibrationProblem(np.arange(k), h, w @ h / w.sum(),
                                                                    float(w.sum()))).residual)
    checks = [(worst <= 1e-8, f"worst residual {worst:.1e} over 100 problems")]

    u1 = solve_entropy_weights(CalibrationProblem(np.arange(3), np.ones((3, 1)), [1.0], 6.0, include_count=False))
    u2 = solve_entropy_weights(CalibrationProblem(np.arange(2), np.empty((2, 0)), np.empty(0), 3.0))
    err = max(np.max(np.abs(u1.weights - 2.0)), np.max(np.abs(u2.weights - 1.5)))
    checks.append((err <= 1e-10, f"uniform cases error {err:.1e}"))

    r = np.random.default_rng(7)
    h = r.normal(size=(40, 2))
    w = 1 + np.exp(0.2 + h @ [0.4, -0.3])
    prob = CalibrationProblem(np.arange(40), h, w @ h / w.sum(), float(w.sum()))
    hh, tot = prob.augmented()

    def prof(lam):
        l0 = _bisect(lambda a: np.sum(1 + np.exp(a + h @ lam)) - prob.scale, -30, 30, 100)
        full = np.array([l0, *lam])
        return np.sum(np.exp(hh @ full) + hh @ full) - full @ tot, l0

    centre, width = np.zeros(2), 2.0
    for _ in range(40):
        grid = [centre + width * np.array([i, j]) / 4 for i in range(-4, 5) for j in range(-4, 5)]
        centre = min(grid, key=lambda g: prof(g)[0])
        width /= 2
    gap = np.max(np.abs(solve_entropy_weights(prob).lam - [prof(centre)[1], *centre]))
    checks.append((gap <= 1e-6, f"2-D dual oracle gap {gap:.1e}"))
    verdict(capsys, 6, checks)


def test_criterion_7_hamd(capsys):
    path = os.environ.get("J2R_HAMD_PATH")
    if not path:
        with capsys.disabled():
            print("\nSKIP criterion 7: J2R_HAMD_PATH not set, HAMD-17 reproduction untested")
        pytest.skip("J2R_HAMD_PATH not set")
    schema = Schema.from_dict(json.loads(Path(path).with_suffix(".schema.json").read_text()))
    ds = load_csv(path, schema)
    spline = spline_model(None, 4)
    an = Analysis(spec=ModelSpec(ps=spline, rp=spline, om=spline), calibration=CalibrationSpec(moments="first2"))
    reps = {r.estimator: r for r in analyze(ds, an, InferenceConfig(B=500, seed=1))}
    checks = [within(reps["mr"].tau, -1.93, 0.15, "mr"), within(reps["mr-C"].tau, -1.71, 0.15, "mr-C")]
    for name, r in reps.items():
        checks.append((r.tau < 0 and r.hi < 0, f"{name} {r.tau:.2f} ({r.lo:.2f}, {r.hi:.2f})"))
    verdict(capsys, 7, checks)


def _simulate_bytes(out, threads):
    from j2r.cli import main
    argv = ["simulate", "--setting", "longitudinal", "--reps", "3", "--B", "6", "--seed", "11",
            "--threads", str(threads), "--out", str(out)]
    assert main(argv) == 0
    return [(out / f).read_bytes() for f in ("simulation.csv", "simulation.txt")]


def test_criterion_8_determinism(tmp_path, capsys):
    a = _simulate_bytes(tmp_path / "a", 1)
    b = _simulate_bytes(tmp_path / "b", 1)
    c = _simulate_bytes(tmp_path / "c", 3)
    verdict(capsys, 8, [(a == b, "same seed rerun identical" if a == b else "rerun differs"),
                        (a == c, "1 vs 3 workers identical" if a == c else "worker count changes output")])
