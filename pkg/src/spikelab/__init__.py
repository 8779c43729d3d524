"""Free convolution via subordination, outlier prediction for spiked deformed
random matrix models, and Monte Carlo verification of those predictions."""

from .errors import (
    BoundaryExtensionError,
    ConfigError,
    DomainError,
    IterationError,
    NumericalError,
    PoleError,
    PreconditionError,
    SpikelabError,
)
from .freeconv import SubordinationPair, convolution_support, omega1, omega2
from .measures import Measure, SupportSet, cauchy_transform, total_variation_distance
from .outliers import Growth, OutlierPrediction, SpikeSchedule, predict_outliers, predict_outliers_multiplicative
from .rmt import ModelSpec, SimulationRun, run_model, run_trials

__version__ = "0.1.0"

__all__ = [
    "BoundaryExtensionError",
    "ConfigError",
    "DomainError",
    "Growth",
    "IterationError",
    "Measure",
    "ModelSpec",
    "NumericalError",
    "OutlierPrediction",
    "PoleError",
    "PreconditionError",
    "SimulationRun",
    "SpikeSchedule",
    "SpikelabError",
    "SubordinationPair",
    "SupportSet",
    "cauchy_transform",
    "convolution_support",
    "omega1",
    "omega2",
    "predict_outliers",
    "predict_outliers_multiplicative",
    "run_model",
    "run_trials",
    "total_variation_distance",
]
