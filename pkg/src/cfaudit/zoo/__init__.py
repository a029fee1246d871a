from .models import (
    DEFAULT_PARAMS,
    FAMILIES,
    ClassifierSpec,
    ConstantClassifier,
    ThresholdClassifier,
    TrainedClassifier,
    TrainingError,
    build_pool,
    from_arrays,
    predict_proba,
    train,
)
from .store import load_classifier, load_pool, save_classifier, save_pool

__all__ = [
    "DEFAULT_PARAMS",
    "FAMILIES",
    "ClassifierSpec",
    "ConstantClassifier",
    "ThresholdClassifier",
    "TrainedClassifier",
    "TrainingError",
    "build_pool",
    "from_arrays",
    "load_classifier",
    "load_pool",
    "predict_proba",
    "save_classifier",
    "save_pool",
    "train",
]
