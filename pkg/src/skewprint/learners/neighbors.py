"""Exhaustive Euclidean neighbour search: k-NN classification and LOF."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .base import LabelClassifier, LearnerError, SerializableMixin

# max floats in one (queries x references x features) difference block
_BLOCK = 8_000_000


def squared_distances(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, computed from explicit differences.

    The expanded ``|q|^2 + |r|^2 - 2 q.r`` form is avoided because its
    cancellation error can reorder near-equal neighbours.
    """
    out = np.empty((Q.shape[0], R.shape[0]))
    step = max(1, _BLOCK // max(1, R.size))
    for i in range(0, Q.shape[0], step):
        diff = Q[i:i + step, None, :] - R[None, :, :]
        out[i:i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest(Q, R, k, exclude_self=False):
    """Indices and distances of the ``k`` nearest rows of ``R`` per query.

    Equal distances are ordered by reference index.
    """
    d2 = squared_distances(Q, R)
    if exclude_self:
        np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order, np.sqrt(np.take_along_axis(d2, order, axis=1))


class KNeighborsClassifier(LabelClassifier):
    """Majority vote of the ``n_neighbors`` closest training vectors."""

    _state_keys = ("classes_", "n_features_in_", "fit_X_", "fit_y_")

    def __init__(self, n_neighbors=5):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        if self.n_neighbors > len(X):
            raise LearnerError(
                f"k exceeds training size ({self.n_neighbors} > {len(X)})"
            )
        self.fit_X_, self.fit_y_ = X, y
        return self

    def kneighbors(self, X):
        X = self._validate_predict(X)
        return nearest(X, self.fit_X_, self.n_neighbors)

    def predict_index(self, X):
        idx, _ = self.kneighbors(X)
        counts = np.zeros((idx.shape[0], len(self.classes_)), dtype=np.int64)
        for j in range(idx.shape[1]):
            np.add.at(counts, (np.arange(idx.shape[0]), self.fit_y_[idx[:, j]]), 1)
        return np.argmax(counts, axis=1)


class LocalOutlierFactor(SerializableMixin, OutlierMixin, BaseEstimator):
    """Novelty-mode LOF over a reference set.

    ``score_samples`` returns the LOF ratio (about 1 for inliers, larger for
    outliers).  ``predict`` maps scores to +1 (inlier, score <= ``cutoff``)
    or -1.
    """

    _state_keys = ("n_features_in_", "fit_X_", "k_distance_", "lrd_")
    _EPS = 1e-10

    def __init__(self, n_neighbors=10, cutoff=1.5):
        self.n_neighbors = n_neighbors
        self.cutoff = cutoff

    def fit(self, X, y=None):
        X = check_array(X).astype(float)
        n = len(X)
        if self.n_neighbors >= n:
            raise LearnerError(
                f"k exceeds training size ({self.n_neighbors} neighbours need > {n} points)"
            )
        idx, dist = nearest(X, X, self.n_neighbors, exclude_self=True)
        self.fit_X_ = X
        self.n_features_in_ = X.shape[1]
        self.k_distance_ = dist[:, -1].copy()
        reach = np.maximum(dist, self.k_distance_[idx])
        self.lrd_ = 1.0 / (reach.mean(axis=1) + self._EPS)
        return self

    def _check(self, X):
        check_is_fitted(self, "lrd_")
        X = check_array(X).astype(float)
        if X.shape[1] != self.n_features_in_:
            raise LearnerError(
                f"dimension mismatch: got {X.shape[1]} features, model has {self.n_features_in_}"
            )
        return X

    def score_samples(self, X):
        X = self._check(X)
        idx, dist = nearest(X, self.fit_X_, self.n_neighbors)
        reach = np.maximum(dist, self.k_distance_[idx])
        lrd_q = 1.0 / (reach.mean(axis=1) + self._EPS)
        return self.lrd_[idx].mean(axis=1) / lrd_q

    def predict(self, X):
        return np.where(self.score_samples(X) <= self.cutoff, 1, -1)
