"""Random forests weighted by a Mallows-like focal loss criterion, for anomaly detection."""

__version__ = "0.1.0"

from .data import Dataset, DataError, load_csv, stratified_subsample, train_test_split  # noqa: E402
from .ensemble import FitConfig, ForestModel, fit_mfl_forest, load_model, save_model  # noqa: E402
from .loss import LossSpec  # noqa: E402
from .mfl import PredictionMatrix, criterion, optimize_weights  # noqa: E402

__all__ = [
    "Dataset", "DataError", "FitConfig", "ForestModel", "LossSpec", "PredictionMatrix",
    "criterion", "fit_mfl_forest", "load_csv", "load_model", "optimize_weights",
    "save_model", "stratified_subsample", "train_test_split",
]
