from __future__ import annotations

import numpy as np

from ._tree import Tree, grow_classifier, grow_gradient
from .base import LabelClassifier, vote_counts
from .tree import resolve_max_features


class RandomForestClassifier(LabelClassifier):
    """Bagged CART trees with a random feature subset drawn at every split.

    Prediction is a hard majority vote over trees; ties go to the smallest
    class index.  ``bootstrap=False`` trains every tree on the full sample.
    """

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2,
                 min_samples_leaf=1, max_features="sqrt", bootstrap=True,
                 random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        n_classes = len(self.classes_)
        m = resolve_max_features(self.max_features, X.shape[1])
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        self.estimators_ = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                rows = rng.integers(0, len(X), size=len(X))
                Xb, yb = X[rows], y[rows]
            else:
                Xb, yb = X, y
            self.estimators_.append(grow_classifier(
                Xb, yb, n_classes,
                max_depth=self.max_depth,
                min_samples_split=self.min_samples_split,
                min_samples_leaf=self.min_samples_leaf,
                max_features=m,
                rng=rng,
            ))
        return self

    def vote_counts(self, X):
        X = self._validate_predict(X)
        votes = np.column_stack([t.predict_value(X).astype(np.intp) for t in self.estimators_])
        return vote_counts(votes, len(self.classes_))

    def predict_index(self, X):
        return np.argmax(self.vote_counts(X), axis=1)

    def predict_proba(self, X):
        counts = self.vote_counts(X)
        return counts / counts.sum(axis=1, keepdims=True)

    def get_state(self):
        return {
            "classes_": {"dtype": self.classes_.dtype.str, "data": self.classes_.tolist()},
            "n_features_in_": self.n_features_in_,
            "trees": [t.to_nested("leaf_class") for t in self.estimators_],
        }

    def set_state(self, state):
        self.classes_ = np.asarray(state["classes_"]["data"], dtype=state["classes_"]["dtype"])
        self.n_features_in_ = state["n_features_in_"]
        self.estimators_ = [Tree.from_nested(t) for t in state["trees"]]
        return self


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class GradientBoostingClassifier(LabelClassifier):
    """One-vs-rest boosted regression trees on logistic loss.

    Each round fits, per class, a tree to the gradient and hessian of the
    binary log-loss, with Newton leaf weights ``-G / (H + reg_lambda)``.
    A split is kept only if half its gain exceeds ``gamma``.  Every tree
    sees a random ``colsample_bytree`` fraction of the features.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=20, gamma=0.01,
                 colsample_bytree=0.5, reg_lambda=1.0, min_child_weight=1.0,
                 random_state=None):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.gamma = gamma
        self.colsample_bytree = colsample_bytree
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        k = len(self.classes_)
        rng = np.random.default_rng(self.random_state)
        Y = np.eye(k)[y]
        prior = np.clip(Y.mean(axis=0), 1e-12, 1 - 1e-12)
        self.base_score_ = np.log(prior / (1 - prior))
        F = np.tile(self.base_score_, (len(X), 1))
        n_cols = max(1, int(np.ceil(self.colsample_bytree * X.shape[1])))
        self.estimators_ = []
        for _ in range(self.n_estimators):
            round_trees = []
            for c in range(k):
                cols = np.sort(rng.choice(X.shape[1], size=n_cols, replace=False))
                p = _sigmoid(F[:, c])
                tree = grow_gradient(
                    X, p - Y[:, c], p * (1 - p),
                    max_depth=self.max_depth, gamma=self.gamma,
                    reg_lambda=self.reg_lambda, min_child_weight=self.min_child_weight,
                    features=cols,
                )
                F[:, c] += self.learning_rate * tree.predict_value(X)
                round_trees.append(tree)
            self.estimators_.append(round_trees)
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        F = np.tile(self.base_score_, (len(X), 1))
        for round_trees in self.estimators_:
            for c, tree in enumerate(round_trees):
                F[:, c] += self.learning_rate * tree.predict_value(X)
        return F

    def predict_index(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def get_state(self):
        return {
            "classes_": {"dtype": self.classes_.dtype.str, "data": self.classes_.tolist()},
            "n_features_in_": self.n_features_in_,
            "base_score_": self.base_score_.tolist(),
            "trees": [[t.to_nested("leaf_value") for t in r] for r in self.estimators_],
        }

    def set_state(self, state):
        self.classes_ = np.asarray(state["classes_"]["data"], dtype=state["classes_"]["dtype"])
        self.n_features_in_ = state["n_features_in_"]
        self.base_score_ = np.asarray(state["base_score_"], dtype=float)
        self.estimators_ = [[Tree.from_nested(t) for t in r] for r in state["trees"]]
        return self
