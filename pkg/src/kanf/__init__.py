"""Kolmogorov-Arnold networks for time-series forecasting, drift detection
and symbolic interpretation, built on numpy."""

__version__ = "0.1.0"

from .core import KanLayer, KanNetwork, backward, count_parameters, forward, predict, prune
from .data import Normalization, WindowDataset, make_windows, synth_generate, train_test_windows
from .errors import (CheckpointError, EmptyDataError, FormatError, InvalidDataError, InvalidInputError,
                     KanfError, TrainingDivergedError)
from .spline import KnotGrid, SplineFunction, basis_eval, fit_curve, spline_eval
from .training import TrainConfig, TrainLog, fit_model, train

__all__ = [
    "CheckpointError", "EmptyDataError", "FormatError", "InvalidDataError", "InvalidInputError",
    "KanLayer", "KanNetwork", "KanfError", "KnotGrid", "Normalization", "SplineFunction",
    "TrainConfig", "TrainLog", "TrainingDivergedError", "WindowDataset", "backward", "basis_eval",
    "count_parameters", "fit_curve", "fit_model", "forward", "make_windows", "predict", "prune",
    "spline_eval", "synth_generate", "train", "train_test_windows",
]
