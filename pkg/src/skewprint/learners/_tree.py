"""Array-backed binary trees shared by the tree learners.

Nodes live in flat arrays in preorder.  A sample goes left when
``x[feature] <= threshold``.  Classification trees split on weighted Gini
impurity; gradient trees use the second-order (gradient/hessian) gain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF = -1
# upper bound on floats materialised per split search chunk
_CHUNK_BUDGET = 4_000_000


@dataclass
class Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)  # leaf class or leaf value

    def __post_init__(self):
        self._arrays = None

    def add(self, feature=LEAF, threshold=0.0, value=0.0) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self._arrays = None
        return len(self.feature) - 1

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def _compiled(self):
        if self._arrays is None:
            self._arrays = (
                np.asarray(self.feature, dtype=np.intp),
                np.asarray(self.threshold, dtype=float),
                np.asarray(self.left, dtype=np.intp),
                np.asarray(self.right, dtype=np.intp),
                np.asarray(self.value),
            )
        return self._arrays

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        feat, thr, left, right, _ = self._compiled()
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        active = feat[node] != LEAF
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, feat[nd]] <= thr[nd]
            node[r] = np.where(go_left, left[nd], right[nd])
            active = feat[node] != LEAF
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self._compiled()[4][self.apply(X)]

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            nd, d = stack.pop()
            best = max(best, d)
            if self.feature[nd] != LEAF:
                stack.append((self.left[nd], d + 1))
                stack.append((self.right[nd], d + 1))
        return best

    def to_nested(self, leaf_key: str) -> dict:
        def walk(nd):
            if self.feature[nd] == LEAF:
                v = self.value[nd]
                return {leaf_key: int(v) if leaf_key == "leaf_class" else float(v)}
            return {
                "feature_index": self.feature[nd],
                "threshold": self.threshold[nd],
                "left": walk(self.left[nd]),
                "right": walk(self.right[nd]),
            }
        return walk(0)

    @classmethod
    def from_nested(cls, data: dict) -> "Tree":
        tree = cls()

        def walk(node):
            if "leaf_class" in node:
                return tree.add(value=int(node["leaf_class"]))
            if "leaf_value" in node:
                return tree.add(value=float(node["leaf_value"]))
            idx = tree.add(node["feature_index"], node["threshold"])
            tree.left[idx] = walk(node["left"])
            tree.right[idx] = walk(node["right"])
            return idx

        walk(data)
        return tree


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    # adjacent floats can round the midpoint up onto b
    return a if mid >= b else mid


def _feature_chunks(features: np.ndarray, n_rows: int, width: int):
    per_chunk = max(1, _CHUNK_BUDGET // max(1, n_rows * width))
    for i in range(0, len(features), per_chunk):
        yield features[i:i + per_chunk]


def best_gini_split(X, y, n_classes, features, min_samples_leaf=1):
    """Lowest weighted-Gini split over ``features``.

    Returns ``(impurity, feature, threshold)`` or ``None``.  Ties go to the
    earlier feature in ``features`` and then to the smaller threshold.

    Sums of squared class counts on each side are tracked incrementally:
    moving the ``r``-th sample of class ``c`` to the left adds ``2r + 1``
    to the left sum, and the right sum follows from the class totals.
    """
    n = len(y)
    if n < 2 * min_samples_leaf:
        return None
    nl = np.arange(1, n, dtype=float)
    nr = n - nl
    leaf_ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
    total = np.bincount(y, minlength=n_classes)
    starts = np.concatenate([[0], np.cumsum(total)[:-1]])
    total_f = total.astype(float)
    sq_total = float((total_f ** 2).sum())
    # small ints make the stable sort below a radix sort
    y_small = y.astype(np.int16) if n_classes < 2 ** 15 else y
    best = None
    for chunk in _feature_chunks(np.asarray(features), n, 8):
        sub = np.ascontiguousarray(X[:, chunk].T)  # (features, rows)
        order = np.argsort(sub, axis=1, kind="stable")
        xs = np.take_along_axis(sub, order, axis=1)
        ys = y_small[order]
        # occurrence rank of each sample within its class, in sorted order
        by_class = np.argsort(ys, axis=1, kind="stable")
        ranks_sorted = np.arange(n) - starts[np.take_along_axis(ys, by_class, axis=1)]
        occ = np.empty_like(ranks_sorted)
        np.put_along_axis(occ, by_class, ranks_sorted, axis=1)
        sq_left = np.cumsum(2.0 * occ + 1.0, axis=1)[:, :-1]
        cross = np.cumsum(total_f[ys], axis=1)[:, :-1]
        sq_right = sq_total - 2.0 * cross + sq_left
        weighted = (nl - sq_left / nl + nr - sq_right / nr) / n
        valid = (xs[:, 1:] > xs[:, :-1]) & leaf_ok
        weighted = np.where(valid, weighted, np.inf)
        flat = weighted.ravel()  # feature-major so argmin prefers earlier features
        k = int(np.argmin(flat))
        if not np.isfinite(flat[k]):
            continue
        j, pos = divmod(k, n - 1)
        if best is None or flat[k] < best[0]:
            best = (float(flat[k]), int(chunk[j]), _midpoint(xs[j, pos], xs[j, pos + 1]))
    return best


def gini(y, n_classes) -> float:
    p = np.bincount(y, minlength=n_classes) / len(y)
    return float(1.0 - (p ** 2).sum())


def best_gradient_split(X, g, h, features, reg_lambda=1.0, min_child_weight=1.0):
    """Largest second-order gain ``GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)``.

    Returns ``(gain, feature, threshold)`` or ``None``.
    """
    n = len(g)
    if n < 2:
        return None
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best = None
    for chunk in _feature_chunks(np.asarray(features), n, 2):
        sub = np.ascontiguousarray(X[:, chunk].T)
        order = np.argsort(sub, axis=1, kind="stable")
        xs = np.take_along_axis(sub, order, axis=1)
        gl = np.cumsum(g[order], axis=1)[:, :-1]
        hl = np.cumsum(h[order], axis=1)[:, :-1]
        gr, hr = G - gl, H - hl
        gain = gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda) - parent
        valid = (xs[:, 1:] > xs[:, :-1]) & (hl >= min_child_weight) & (hr >= min_child_weight)
        gain = np.where(valid, gain, -np.inf)
        flat = gain.ravel()
        k = int(np.argmax(flat))
        if not np.isfinite(flat[k]):
            continue
        j, pos = divmod(k, n - 1)
        if best is None or flat[k] > best[0]:
            best = (float(flat[k]), int(chunk[j]), _midpoint(xs[j, pos], xs[j, pos + 1]))
    return best


def _pick_features(n_features, max_features, rng):
    if max_features is None or max_features >= n_features:
        return np.arange(n_features)
    return np.sort(rng.choice(n_features, size=max_features, replace=False))


def grow_classifier(
    X, y, n_classes, max_depth=None, min_samples_split=2, min_samples_leaf=1,
    max_features=None, rng=None,
) -> Tree:
    """CART with Gini impurity; a split is kept only if it strictly lowers impurity."""
    tree = Tree()
    root_value = int(np.argmax(np.bincount(y, minlength=n_classes)))
    stack = [(tree.add(value=root_value), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        parent = gini(yn, n_classes)
        if (
            parent == 0.0
            or len(idx) < min_samples_split
            or (max_depth is not None and depth >= max_depth)
        ):
            continue
        feats = _pick_features(X.shape[1], max_features, rng)
        found = best_gini_split(X[idx], yn, n_classes, feats, min_samples_leaf)
        if found is None or not found[0] < parent - 1e-12:
            continue
        _, f, thr = found
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        tree.feature[node], tree.threshold[node] = f, thr
        children = []
        for part in (li, ri):
            counts = np.bincount(y[part], minlength=n_classes)
            children.append(tree.add(value=int(np.argmax(counts))))
        tree.left[node], tree.right[node] = children
        # right pushed first so the left subtree is expanded next (preorder-ish ids)
        stack.append((children[1], ri, depth + 1))
        stack.append((children[0], li, depth + 1))
    tree._arrays = None
    return tree


def grow_gradient(
    X, g, h, max_depth=6, gamma=0.0, reg_lambda=1.0, min_child_weight=1.0,
    features=None,
) -> Tree:
    """Regression tree on gradient statistics with Newton leaf weights."""
    if features is None:
        features = np.arange(X.shape[1])
    tree = Tree()

    def leaf_weight(ix):
        return float(-g[ix].sum() / (h[ix].sum() + reg_lambda))

    all_idx = np.arange(len(g))
    stack = [(tree.add(value=leaf_weight(all_idx)), all_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        found = best_gradient_split(X[idx], g[idx], h[idx], features, reg_lambda, min_child_weight)
        if found is None or 0.5 * found[0] - gamma <= 0:
            continue
        _, f, thr = found
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        tree.feature[node], tree.threshold[node] = f, thr
        lc, rc = tree.add(value=leaf_weight(li)), tree.add(value=leaf_weight(ri))
        tree.left[node], tree.right[node] = lc, rc
        stack.append((rc, ri, depth + 1))
        stack.append((lc, li, depth + 1))
    tree._arrays = None
    return tree
