"""Quality monitoring by deep canonical correlation between process signals and quality data."""
from .cca import CcaSolution, GaussianCcaSpec, cca_score, cca_score_gradient, make_gaussian_spec, sample_gaussian
from .errors import (
    ArtifactError,
    ConfigError,
    DccamonError,
    DegenerateWindowError,
    DivergenceError,
    InsufficientDataError,
    ShapeError,
)
from .kernels import BACKEND
from .linalg import SymEig, centered_covariance, inv_sqrt_spd, nuclear_norm, sym_eig
from .monitor import MonitorModel, ReferenceLibrary, WindowVerdict, calibrate_threshold, evaluate, nearest_match
from .training import DataWindow, EncoderPair, TrainConfig, loss_and_grads, make_windows, train

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "BACKEND",
    "CcaSolution",
    "ConfigError",
    "DataWindow",
    "DccamonError",
    "DegenerateWindowError",
    "DivergenceError",
    "EncoderPair",
    "GaussianCcaSpec",
    "InsufficientDataError",
    "MonitorModel",
    "ReferenceLibrary",
    "ShapeError",
    "SymEig",
    "TrainConfig",
    "WindowVerdict",
    "calibrate_threshold",
    "cca_score",
    "cca_score_gradient",
    "centered_covariance",
    "evaluate",
    "inv_sqrt_spd",
    "loss_and_grads",
    "make_gaussian_spec",
    "make_windows",
    "nearest_match",
    "nuclear_norm",
    "sample_gaussian",
    "sym_eig",
    "train",
]
