"""Algorithm specs, trained model artifacts and their JSON form."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..featurizer import Dataset, FeatureVector, ScalerParams, _as_matrix, apply_scaler
from .base import LearnerError
from .ensemble import GradientBoostingClassifier, RandomForestClassifier
from .naive_bayes import GaussianNB
from .neighbors import KNeighborsClassifier, LocalOutlierFactor
from .tree import DecisionTreeClassifier

FORMAT = "skewprint-model"
FORMAT_VERSION = 1

ESTIMATORS = {
    "gnb": GaussianNB,
    "knn": KNeighborsClassifier,
    "dtree": DecisionTreeClassifier,
    "rforest": RandomForestClassifier,
    "gboost": GradientBoostingClassifier,
    "lof": LocalOutlierFactor,
}
CLASSIFIERS = ("gnb", "knn", "dtree", "rforest", "gboost")
SEEDED = ("dtree", "rforest", "gboost")

# names used in the hyperparameter table -> estimator parameter names
ALIASES = {
    "k": "n_neighbors",
    "number_of_trees": "n_estimators",
    "lr": "learning_rate",
}

# ranges searched for the original hardware study; advisory only
TUNED_RANGES = {
    "knn": {"n_neighbors": (3, 20)},
    "dtree": {"max_depth": (None, 5, 10, 15, 20), "min_samples_split": (2, 5)},
    "rforest": {
        "n_estimators": (50, 1000),
        "max_depth": (None, 5, 10, 15, 20),
        "min_samples_split": (2, 5),
    },
    "gboost": {
        "learning_rate": (0.01, 0.3),
        "max_depth": (3, 20),
        "gamma": (0.0, 0.5),
        "colsample_bytree": (0.3, 0.7),
    },
}


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise LearnerError(f"unknown algorithm {self.name!r}")
        params = {ALIASES.get(k, k): v for k, v in dict(self.hyperparameters).items()}
        valid = ESTIMATORS[self.name]().get_params()
        bad = sorted(set(params) - set(valid))
        if bad:
            raise LearnerError(f"{self.name}: unknown hyperparameters {bad}")
        object.__setattr__(self, "hyperparameters", params)

    def build(self, seed: int | None = None):
        params = dict(self.hyperparameters)
        if self.name in SEEDED and "random_state" not in params:
            params["random_state"] = seed
        return ESTIMATORS[self.name](**params)

    def within_tuned_ranges(self) -> bool:
        ranges = TUNED_RANGES.get(self.name, {})
        for key, allowed in ranges.items():
            if key not in self.hyperparameters:
                continue
            v = self.hyperparameters[key]
            if None in allowed or len(allowed) > 2:
                if v not in allowed:
                    return False
            elif not allowed[0] <= v <= allowed[1]:
                return False
        return True

    def to_dict(self) -> dict:
        return {"name": self.name, "hyperparameters": dict(self.hyperparameters)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AlgorithmSpec":
        return cls(data["name"], dict(data.get("hyperparameters", {})))

    def __hash__(self):
        return hash(canonical_json(self.to_dict()))


@dataclass
class ModelArtifact:
    """A fitted estimator bundled with everything prediction needs.

    Inputs to :meth:`predict` are raw (unscaled) feature vectors; the stored
    scaler is applied first.
    """

    spec: AlgorithmSpec
    scaler: ScalerParams
    label_map: dict[str, int]
    estimator: Any
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def is_anomaly_model(self) -> bool:
        return self.spec.name == "lof"

    @property
    def labels(self) -> list[str]:
        return sorted(self.label_map, key=self.label_map.__getitem__)

    @property
    def n_features(self) -> int:
        return len(self.scaler)

    def _scaled(self, vectors) -> np.ndarray:
        X = _as_matrix(vectors) if not isinstance(vectors, np.ndarray) else np.atleast_2d(vectors)
        if X.shape[-1] != self.n_features:
            raise LearnerError(
                f"dimension mismatch: got {X.shape[-1]} features, model has {self.n_features}"
            )
        return apply_scaler(X, self.scaler)

    def predict(self, vectors) -> np.ndarray:
        """Device ids for classifiers, LOF scores for anomaly models."""
        X = self._scaled(vectors)
        if self.is_anomaly_model:
            return self.estimator.score_samples(X)
        labels = np.array(self.labels, dtype=object)
        return labels[self.estimator.predict(X)]

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "scaler": self.scaler.to_dict(),
            "label_map": dict(self.label_map),
            "state": self.estimator.get_state(),
            "params": _plain(self.estimator.get_params()),
            "metadata": _plain(self.metadata),
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())

    @property
    def model_id(self) -> str:
        return hashlib.sha256(self.to_json()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelArtifact":
        if data.get("format") != FORMAT:
            raise LearnerError("not a model artifact")
        spec = AlgorithmSpec.from_dict(data["spec"])
        est = ESTIMATORS[spec.name](**data.get("params", {}))
        est.set_state(data["state"])
        return cls(
            spec=spec,
            scaler=ScalerParams.from_dict(data["scaler"]),
            label_map={k: int(v) for k, v in data["label_map"].items()},
            estimator=est,
            metadata=dict(data.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, raw: bytes | str) -> "ModelArtifact":
        return cls.from_dict(json.loads(raw))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_json())

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        return cls.from_json(Path(path).read_bytes())


def _plain(obj):
    """JSON-compatible copy (numpy scalars and arrays to Python types)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def train_model(
    spec: AlgorithmSpec,
    dataset: Dataset,
    seed: int = 0,
    device_id: str | None = None,
    k_sigma: float | None = 3.0,
) -> ModelArtifact:
    """Fit ``spec`` on the scaled training vectors of ``dataset``.

    For ``lof`` the model covers one device: ``device_id`` selects it, or
    the dataset must hold a single device.
    """
    vectors: list[FeatureVector] = dataset.train_vectors
    if not vectors:
        raise LearnerError("no training vectors")
    metadata: dict[str, Any] = {
        "seed": seed,
        "feature_names": list(vectors[0].feature_names),
        "window_cfg": dataset.window_cfg.to_dict(),
        "k_sigma": k_sigma,
    }
    est = spec.build(seed)
    if spec.name == "lof":
        labels = sorted({v.label for v in vectors})
        if device_id is None:
            if len(labels) != 1:
                raise LearnerError("lof needs the vectors of a single device; pass device_id")
            device_id = labels[0]
        vectors = [v for v in vectors if v.label == device_id]
        if not vectors:
            raise LearnerError(f"unknown device {device_id!r}")
        est.fit(_as_matrix(vectors))
        label_map = {device_id: 0}
        metadata["device_id"] = device_id
    else:
        X = _as_matrix(vectors)
        y = np.array([dataset.label_map[v.label] for v in vectors])
        est.fit(X, y)
        label_map = dict(dataset.label_map)
    metadata["train_vector_count"] = len(vectors)
    return ModelArtifact(spec, dataset.scaler, label_map, est, metadata)


def predict(model: ModelArtifact, vector):
    """Label (classifier) or LOF score (anomaly model) for one raw vector.

    A 2-D input returns one result per row.
    """
    arr = vector.values if isinstance(vector, FeatureVector) else np.asarray(vector, dtype=float)
    if arr.ndim == 1:
        return model.predict(arr[None, :])[0]
    return model.predict(arr)
