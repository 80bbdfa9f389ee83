from __future__ import annotations

import math

import numpy as np

from ._tree import Tree, grow_classifier
from .base import LabelClassifier


def resolve_max_features(max_features, n_features: int) -> int | None:
    if max_features is None:
        return None
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if isinstance(max_features, float):
        return max(1, math.ceil(max_features * n_features))
    return int(max_features)


class DecisionTreeClassifier(LabelClassifier):
    """CART classifier (Gini impurity, thresholds at midpoints of sorted values).

    Parameters
    ----------
    max_depth : int or None
    min_samples_split : int
        A node with fewer samples becomes a leaf.
    max_features : None, "sqrt", float or int
        Features examined per split; a random subset when below ``n_features``.
    random_state : int or None
        Seeds the per-split feature draw.
    """

    _state_keys = ("classes_", "n_features_in_", "tree_")

    def __init__(self, max_depth=None, min_samples_split=2, min_samples_leaf=1,
                 max_features=None, random_state=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        self._fit_encoded(X, y, len(self.classes_), np.random.default_rng(self.random_state))
        return self

    def _fit_encoded(self, X, y, n_classes, rng):
        self.tree_ = grow_classifier(
            X, y, n_classes,
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            min_samples_leaf=self.min_samples_leaf,
            max_features=resolve_max_features(self.max_features, X.shape[1]),
            rng=rng,
        )
        return self

    def predict_index(self, X):
        X = self._validate_predict(X)
        return self.tree_.predict_value(X).astype(np.intp)

    def get_state(self):
        return {
            "classes_": {"dtype": self.classes_.dtype.str, "data": self.classes_.tolist()},
            "n_features_in_": self.n_features_in_,
            "tree_": self.tree_.to_nested("leaf_class"),
        }

    def set_state(self, state):
        self.classes_ = np.asarray(state["classes_"]["data"], dtype=state["classes_"]["dtype"])
        self.n_features_in_ = state["n_features_in_"]
        self.tree_ = Tree.from_nested(state["tree_"])
        return self
