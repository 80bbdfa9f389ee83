"""From-scratch learners with a scikit-learn compatible surface."""
from .artifact import (
    CLASSIFIERS,
    ESTIMATORS,
    AlgorithmSpec,
    ModelArtifact,
    canonical_json,
    predict,
    train_model,
)
from .base import LearnerError
from .ensemble import GradientBoostingClassifier, RandomForestClassifier
from .model_selection import CandidateResult, CvReport, assign_folds, expand_grid, grid_search_cv
from .naive_bayes import GaussianNB
from .neighbors import KNeighborsClassifier, LocalOutlierFactor
from .tree import DecisionTreeClassifier

__all__ = [
    "CLASSIFIERS", "ESTIMATORS", "AlgorithmSpec", "ModelArtifact", "canonical_json",
    "predict", "train_model", "LearnerError", "GradientBoostingClassifier",
    "RandomForestClassifier", "CandidateResult", "CvReport", "assign_folds",
    "expand_grid", "grid_search_cv", "GaussianNB", "KNeighborsClassifier",
    "LocalOutlierFactor", "DecisionTreeClassifier",
]
