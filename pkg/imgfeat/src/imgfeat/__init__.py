"""Solar-image quality filtering and hourly feature extraction feeding the
Kp forecasting pipeline's image modality."""

from .emit import emit_feature_file
from .extract import FEATURE_DIM, Extractor, FeatureRecord, process_directory
from .qc import QcConfig, qc_filter, ring_dark_ratio

__version__ = "0.1.0"

__all__ = [
    "FEATURE_DIM",
    "Extractor",
    "FeatureRecord",
    "QcConfig",
    "emit_feature_file",
    "process_directory",
    "qc_filter",
    "ring_dark_ratio",
    "__version__",
]
