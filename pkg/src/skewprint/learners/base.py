"""Shared plumbing for the from-scratch estimators."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class LearnerError(ValueError):
    pass


class SerializableMixin:
    """Learned state as plain JSON-compatible data.

    Subclasses list their fitted attributes in ``_state_keys``; arrays are
    stored as nested lists and restored with their dtype.
    """

    _state_keys: tuple[str, ...] = ()

    def get_state(self) -> dict:
        check_is_fitted(self)
        out = {}
        for key in self._state_keys:
            val = getattr(self, key)
            if isinstance(val, np.ndarray):
                out[key] = {"dtype": val.dtype.str, "data": val.tolist()}
            else:
                out[key] = val
        return out

    def set_state(self, state: dict):
        for key in self._state_keys:
            val = state[key]
            if isinstance(val, dict) and set(val) == {"dtype", "data"}:
                val = np.asarray(val["data"], dtype=np.dtype(val["dtype"]))
            setattr(self, key, val)
        return self


class LabelClassifier(SerializableMixin, ClassifierMixin, BaseEstimator):
    """Encodes arbitrary labels to ``0..n_classes-1`` in sorted order.

    Ties anywhere in prediction resolve to the smallest encoded index.
    """

    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise LearnerError("classifier training needs at least 2 classes")
        self.n_features_in_ = X.shape[1]
        return X.astype(float), y_enc.astype(np.intp)

    def _validate_predict(self, X):
        check_is_fitted(self)
        X = check_array(X).astype(float)
        if X.shape[1] != self.n_features_in_:
            raise LearnerError(
                f"dimension mismatch: got {X.shape[1]} features, model has {self.n_features_in_}"
            )
        return X

    def predict(self, X):
        return self.classes_[self.predict_index(X)]

    def predict_index(self, X) -> np.ndarray:
        raise NotImplementedError


def argmax_first(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; numpy already returns the first maximal column."""
    return np.argmax(scores, axis=1)


def vote_counts(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-row histogram of integer votes; ``labels`` is (n_rows, n_voters)."""
    n = labels.shape[0]
    counts = np.zeros((n, n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(n), labels.shape[1])
    np.add.at(counts, (rows, labels.ravel()), 1)
    return counts
