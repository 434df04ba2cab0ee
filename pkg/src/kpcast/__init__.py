"""Multimodal Kp-index forecasting: data conditioning, windowed datasets,
a distribution-aligned multimodal transformer trained with a combined
cross-entropy + Wasserstein objective, and walk-forward daily forecasting."""

from .dataset import LabelConfig, WindowConfig, WindowSample
from .features import FeatureTransform
from .forecast import ForecastConfig, ForecastReport
from .ingest import KpSeries, SentinelConfig, TimeTable
from .loss import LossConfig
from .model import DistVector, ModelConfig, ModelOutput, ModelParams
from .train import OptimizerState, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "DistVector",
    "FeatureTransform",
    "ForecastConfig",
    "ForecastReport",
    "KpSeries",
    "LabelConfig",
    "LossConfig",
    "ModelConfig",
    "ModelOutput",
    "ModelParams",
    "OptimizerState",
    "SentinelConfig",
    "TimeTable",
    "TrainConfig",
    "WindowConfig",
    "WindowSample",
    "__version__",
]
