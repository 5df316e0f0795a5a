"""Treatment-effect estimation under jump-to-reference with monotone dropout."""

from .calibrate import CalibrationSpec, calibrate, solve_entropy_weights
from .dataset import DataError, Schema, TrialDataset, load_csv, write_csv
from .estimators import ALL_KINDS, EstimatorKind, estimate, estimate_all
from .inference import Analysis, InferenceConfig, analyze
from .nuisance import FitOptions, ModelSpec, NuisanceModel, fit_nuisances
from .sim import DgpConfig, run_mc, true_tau

__all__ = [
    "ALL_KINDS", "Analysis", "CalibrationSpec", "DataError", "DgpConfig", "EstimatorKind", "FitOptions",
    "InferenceConfig", "ModelSpec", "NuisanceModel", "Schema", "TrialDataset", "analyze", "calibrate", "estimate",
    "estimate_all", "fit_nuisances", "load_csv", "run_mc", "solve_entropy_weights", "true_tau", "write_csv",
]
