"""Command-line front end.

    j2r estimate  --data trial.csv --schema schema.json [--estimators mr,mr-C] [--out DIR]
    j2r simulate  --setting cross --reps 200 --seed 1 [--threads 4] [--out DIR]
    j2r weights   (--data trial.csv --schema schema.json | --setting longitudinal) [--out DIR]
    j2r oracle    --setting longitudinal [--draws 10000000]

``--config FILE`` reads a flat JSON object whose keys are long option names
without the leading dashes (``{"reps": 200, "calibration-moments": "first2"}``);
flags given on the command line take precedence.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibrate import MOMENTS, CalibrationError, CalibrationSpec, calibrate, weight_rows, write_weights_csv
from .dataset import DataError, Schema, TrialDataset, load_csv
from .estimators import ALL_KINDS, EstimatorError, EstimatorKind
from .inference import (Analysis, InferenceConfig, InferenceError, analyze, format_table, write_reports_csv,
                        write_reports_json)
from .nuisance import ModelSpec, NuisanceError, NuisanceModel, constant_nuisances, fit_nuisances, spline_model
from .regress import RankDeficientError
from .sim import (GRID, LONGITUDINAL_CELL, DgpConfig, apply_spec_cell, calibration_for, format_sim_table, generate,
                  longitudinal_spec, run_mc, true_tau, write_sim_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SETTING_ALIASES = {"cross": "cross_sectional", "cross_sectional": "cross_sectional",
                   "longitudinal": "longitudinal_t2", "longitudinal_t2": "longitudinal_t2",
                   "discrete": "discrete_oracle", "discrete_oracle": "discrete_oracle"}
NUMERIC_ERRORS = (CalibrationError, NuisanceError, EstimatorError, InferenceError, RankDeficientError,
                  np.linalg.LinAlgError, FloatingPointError)
DEFAULT_OUT = "j2r_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file of option values")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="worker processes (results do not depend on it)")
    p.add_argument("--out", default=None, help=f"output directory (default ./{DEFAULT_OUT})")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="wide CSV, one row per subject")
    p.add_argument("--schema", default=None, help="JSON schema: treatment, covariates, outcomes, strata, missing")
    p.add_argument("--drop-invalid", action="store_true", default=None,
                   help="drop subjects with absent baseline values or non-monotone outcomes instead of failing")


def _add_models(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimators", default=None, help="comma list (default: all eight)")
    p.add_argument("--basis", default=None,
                   help="working-model terms: 'linear' or 'spline' / 'spline:K' (natural splines, K interior knots)")
    p.add_argument("--calibration-moments", choices=MOMENTS, default=None)
    p.add_argument("--calibration-arm", choices=("pooled", "control"), default=None,
                   help="subjects balanced by the response weights")


def _add_inference(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ci", choices=("auto", "wald", "percentile", "symt"), default=None)
    p.add_argument("--B", type=int, default=None, help="bootstrap replicates")
    p.add_argument("--level", type=float, default=None, help="interval coverage (default 0.95)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="j2r", description="Treatment effects under jump-to-reference with monotone dropout.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    est = sub.add_parser("estimate", help="analyze a CSV dataset")
    _add_common(est)
    _add_data(est)
    _add_models(est)
    _add_inference(est)
    est.add_argument("--nuisance-override", default=None,
                     help="JSON with constant nuisances e, pi1, pi0, mu1, mu0 (skips fitting)")

    sim = sub.add_parser("simulate", help="Monte Carlo study of the simulation designs")
    _add_common(sim)
    sim.add_argument("--setting", default=None, help="cross | longitudinal | discrete")
    sim.add_argument("--n", type=int, default=None, help="sample size (default 500)")
    sim.add_argument("--reps", type=int, default=None, help="Monte Carlo replicates (default 200)")
    sim.add_argument("--cells", default=None, help="cross-sectional grid cells, e.g. yes/yes/no;no/no/no (default all)")
    _add_models(sim)
    _add_inference(sim)

    wts = sub.add_parser("weights", help="export inverse-probability and calibration weights")
    _add_common(wts)
    _add_data(wts)
    wts.add_argument("--setting", default=None, help="generate data from a simulation design instead of --data")
    wts.add_argument("--n", type=int, default=None)
    _add_models(wts)

    orc = sub.add_parser("oracle", help="population treatment effect of a simulation design")
    _add_common(orc)
    orc.add_argument("--setting", default=None)
    orc.add_argument("--method", choices=("mc_large_n", "enumeration"), default=None)
    orc.add_argument("--draws", type=int, default=None, help="Monte Carlo draws (default 10^7)")
    return parser


DEFAULTS = {"seed": 0, "threads": 1, "out": None, "data": None, "schema": None, "drop_invalid": False,
            "estimators": None, "basis": None, "calibration_moments": None, "calibration_arm": None, "ci": "auto",
            "B": None, "level": 0.95, "nuisance_override": None, "setting": None, "n": 500, "reps": 200,
            "cells": None, "method": "mc_large_n", "draws": 10 ** 7}


def resolve(argv) -> argparse.Namespace:
    """Parse flags, fill from ``--config`` where a flag was not given, then apply defaults."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError("a command is required: estimate, simulate, weights or oracle")
    if ns.config:
        try:
            conf = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(conf, dict):
            raise UsageError("config must be a flat JSON object")
        for key, val in conf.items():
            attr = key.lstrip("-").replace("-", "_")
            if not hasattr(ns, attr) or attr in ("command", "config"):
                raise UsageError(f"config key {key!r} is not an option of '{ns.command}'")
            if isinstance(val, (dict, list)):
                raise UsageError(f"config key {key!r}: values must be scalars")
            if getattr(ns, attr) is None:
                setattr(ns, attr, val)
    for key, val in DEFAULTS.items():
        if hasattr(ns, key) and getattr(ns, key) is None:
            setattr(ns, key, val)
    if ns.threads < 1:
        raise UsageError("--threads must be at least 1")
    return ns


# ---------------------------------------------------------------------------
# helpers


def _out_dir(ns) -> Path:
    if ns.out is None:
        print(f"warning: no --out given; writing to ./{DEFAULT_OUT}", file=sys.stderr)
        ns.out = DEFAULT_OUT
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setting(name) -> str:
    if name is None:
        raise UsageError("--setting is required (cross, longitudinal or discrete)")
    try:
        return SETTING_ALIASES[str(name)]
    except KeyError:
        raise UsageError(f"unknown setting {name!r}") from None


def _kinds(text) -> tuple:
    if text is None:
        return ALL_KINDS
    try:
        kinds = tuple(EstimatorKind.parse(s.strip()) for s in str(text).split(",") if s.strip())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not kinds:
        raise UsageError("--estimators is empty")
    return tuple(dict.fromkeys(kinds))


def _knots(basis) -> int:
    """0 for linear terms, else the number of interior spline knots."""
    if basis is None or basis == "linear":
        return 0
    text = str(basis)
    if text == "spline":
        return 4
    if text.startswith("spline:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            k = -1
        if k >= 1:
            return k
    raise UsageError(f"--basis must be 'linear', 'spline' or 'spline:K', got {basis!r}")


def _calibration(ns, default: CalibrationSpec) -> CalibrationSpec:
    moments = ns.calibration_moments or default.moments
    arm = default.response_arm
    if ns.calibration_arm is not None:
        arm = 0 if ns.calibration_arm == "control" else None
    return CalibrationSpec(moments=moments, features=default.features, history=default.history, response_arm=arm,
                           tol=default.tol, max_iter=default.max_iter)


def _load(ns) -> TrialDataset:
    if ns.data is None or ns.schema is None:
        raise UsageError("--data and --schema are both required")
    try:
        schema = Schema.from_dict(json.loads(Path(ns.schema).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read schema {ns.schema}: {exc}") from None
    if not Path(ns.data).is_file():
        raise DataError(f"data file not found: {ns.data}")
    ds = load_csv(ns.data, schema, drop_invalid=bool(ns.drop_invalid))
    for d in ds.diagnostics:
        print(f"note: {d}", file=sys.stderr)
    return ds


def _data_spec(ns) -> ModelSpec:
    k = _knots(ns.basis)
    model = spline_model(None, k) if k else NuisanceModel(None)
    return ModelSpec(ps=model, rp=model, om=model)


def _inference(ns, t: int, default_B: int) -> InferenceConfig:
    B = default_B if ns.B is None else int(ns.B)
    if B < 0:
        raise UsageError("--B must be nonnegative")
    if not 0 < float(ns.level) < 1:
        raise UsageError("--level must lie in (0, 1)")
    return InferenceConfig(ci=ns.ci, B=B, level=float(ns.level), seed=int(ns.seed), workers=int(ns.threads))


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(ns) -> int:
    kinds = _kinds(ns.estimators)
    ds = _load(ns)
    cal = _calibration(ns, CalibrationSpec(moments="first2"))
    out = _out_dir(ns)
    analysis = Analysis(spec=_data_spec(ns), calibration=cal, kinds=kinds)
    if ns.nuisance_override:
        try:
            c = json.loads(Path(ns.nuisance_override).read_text(encoding="utf-8"))
            values = constant_nuisances(ds, float(c["e"]), float(c["pi1"]), float(c["pi0"]), float(c["mu1"]),
                                        float(c["mu0"]))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad nuisance override file: {exc}") from None
        cfg = InferenceConfig(ci="plugin", level=float(ns.level), seed=int(ns.seed))
        reports = analyze(ds, analysis, cfg, values=values)
    else:
        reports = analyze(ds, analysis, _inference(ns, ds.t, 200))
    write_reports_csv(reports, out / "estimates.csv")
    write_reports_json(reports, out / "estimates.json")
    table = format_table(reports)
    (out / "estimates.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_simulate(ns) -> int:
    setting = _setting(ns.setting)
    reps = int(ns.reps)
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    if int(ns.n) < 2:
        raise UsageError("--n must be at least 2")
    kinds = _kinds(ns.estimators)
    cfg = DgpConfig(setting=setting, n=int(ns.n))
    if setting == "cross_sectional":
        cells = GRID
        if ns.cells:
            labels = {c.label: c for c in GRID}
            try:
                cells = tuple(labels[s.strip()] for s in str(ns.cells).split(";") if s.strip())
            except KeyError as exc:
                raise UsageError(f"unknown cell {exc}; cells look like yes/no/yes") from None
    else:
        cells = (LONGITUDINAL_CELL,)
    k = _knots(ns.basis)
    if k and setting == "longitudinal_t2":
        cells = (f"{LONGITUDINAL_CELL}:spline{k}",)
    cal = _calibration(ns, calibration_for(setting))
    B = 100 if setting == "cross_sectional" else 200
    inf = _inference(ns, 1 if setting == "cross_sectional" else 2, B)
    out = _out_dir(ns)
    report = run_mc(cfg, cells=cells, kinds=kinds, reps=reps, inference=inf, seed=int(ns.seed),
                    workers=int(ns.threads), calibration=cal)
    write_sim_csv(report, out / "simulation.csv")
    table = format_sim_table(report)
    (out / "simulation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    for d in report.diagnostics[:5]:
        print(f"note: {d}", file=sys.stderr)
    return EXIT_OK


def cmd_weights(ns) -> int:
    if ns.data is not None:
        ds = _load(ns)
        spec = _data_spec(ns)
        cal = _calibration(ns, CalibrationSpec(moments="first2"))
    else:
        setting = _setting(ns.setting)
        if setting == "discrete_oracle":
            raise UsageError("weights supports the cross and longitudinal designs or --data")
        ds = generate(DgpConfig(setting=setting, n=int(ns.n)), np.random.default_rng(int(ns.seed)))
        k = _knots(ns.basis)
        spec = apply_spec_cell(GRID[0]) if setting == "cross_sectional" else longitudinal_spec(k)
        cal = _calibration(ns, calibration_for(setting))
    out = _out_dir(ns)
    values = fit_nuisances(ds, spec).values
    bundle = calibrate(ds, cal)
    rows = weight_rows(ds, values, bundle)
    write_weights_csv(rows, out / "weights.csv")
    print(f"wrote {len(rows)} rows to {out / 'weights.csv'}")
    return EXIT_OK


def cmd_oracle(ns) -> int:
    setting = _setting(ns.setting)
    draws = int(ns.draws)
    if draws < 2:
        raise UsageError("--draws must be at least 2")
    cfg = DgpConfig(setting=setting)
    try:
        tau, se = true_tau(cfg, method=ns.method, draws=draws, seed=int(ns.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    payload = {"setting": setting, "method": ns.method, "draws": draws if ns.method == "mc_large_n" else 0,
               "seed": int(ns.seed), "tau": tau, "se": se}
    out = _out_dir(ns)
    (out / "oracle.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(payload))
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "weights": cmd_weights, "oracle": cmd_oracle}


def main(argv=None) -> int:
    try:
        ns = resolve(sys.argv[1:] if argv is None else argv)
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
