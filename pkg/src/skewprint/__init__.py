"""Device identification from CPU/GPU clock-skew fingerprints."""
from .featurizer import Dataset, FeatureVector, ScalerParams, WindowConfig, featurize_session
from .identifier import IdentificationDecision, decide_identity, evaluate_fleet
from .metrics import ConfusionMatrix, MetricsReport, class_metrics, confusion_matrix
from .simulator import DeviceProfile, MeasurementSession, SessionConfig, simulate_session

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FeatureVector", "ScalerParams", "WindowConfig", "featurize_session",
    "IdentificationDecision", "decide_identity", "evaluate_fleet", "ConfusionMatrix",
    "MetricsReport", "class_metrics", "confusion_matrix", "DeviceProfile",
    "MeasurementSession", "SessionConfig", "simulate_session",
]
