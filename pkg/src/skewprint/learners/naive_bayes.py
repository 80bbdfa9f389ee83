from __future__ import annotations

import numpy as np

from .base import LabelClassifier


class GaussianNB(LabelClassifier):
    """Gaussian naive Bayes with an absolute variance floor.

    Parameters
    ----------
    var_floor : float
        Per-class feature variances below this value are raised to it, so
        constant features do not produce infinite densities.
    """

    _state_keys = ("classes_", "n_features_in_", "theta_", "var_", "class_prior_")

    def __init__(self, var_floor=1e-9):
        self.var_floor = var_floor

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        k = len(self.classes_)
        self.theta_ = np.zeros((k, X.shape[1]))
        self.var_ = np.zeros((k, X.shape[1]))
        self.class_prior_ = np.zeros(k)
        for c in range(k):
            Xc = X[y == c]
            self.theta_[c] = Xc.mean(axis=0)
            self.var_[c] = np.maximum(Xc.var(axis=0), self.var_floor)
            self.class_prior_[c] = len(Xc) / len(X)
        return self

    def joint_log_likelihood(self, X):
        X = self._validate_predict(X)
        jll = np.empty((X.shape[0], len(self.classes_)))
        for c in range(len(self.classes_)):
            log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * self.var_[c]))
            quad = -0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
            jll[:, c] = np.log(self.class_prior_[c]) + log_norm + quad
        return jll

    def predict_index(self, X):
        return np.argmax(self.joint_log_likelihood(X), axis=1)
