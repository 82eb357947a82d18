"""CART decision trees stored as flat node arrays.

Node ``i`` is a leaf when ``feature[i] == -1``; otherwise samples with
``x[feature] <= threshold`` go to ``left[i]`` and the rest to ``right[i]``.
Classification leaves hold ``(p0, p1)``; regression leaves hold one value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, 2) class probabilities or (n_nodes, 1) regression values

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict_proba(self, X) -> np.ndarray:
        """Class-1 probability of every row."""
        return self.value[self.apply(X), 1]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )


def gini_impurity(labels) -> float:
    """``1 - p0**2 - p1**2`` of a non-empty 0/1 label multiset."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("gini impurity of an empty set is undefined")
    p1 = float(np.mean(labels == 1))
    return 1.0 - p1 * p1 - (1.0 - p1) ** 2


def _sorted_columns(X, idx, features):
    sub = X[np.ix_(idx, features)]
    order = np.argsort(sub, axis=0, kind="stable")
    return np.take_along_axis(sub, order, axis=0), order


def best_gini_split(X, y, idx, features, min_leaf=1):
    """Split of the samples ``idx`` minimizing weighted child Gini.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold; equality
    is decided exactly, not in floating point. Returns ``(feature, threshold)``
    or None when no split is possible.
    """
    n = len(idx)
    if n < 2 * min_leaf or len(features) == 0:
        return None
    vals, order = _sorted_columns(X, idx, features)
    ys = y[idx][order].astype(np.int64)
    c1 = np.cumsum(ys, axis=0)[:-1]  # class-1 counts left of split position i+1
    n_left = np.arange(1, n, dtype=np.int64)[:, None]
    n_right = n - n_left
    l1, l0 = c1, n_left - c1
    tot1 = int(ys[:, 0].sum())
    r1 = tot1 - l1
    r0 = n_right - r1
    a = l0 * l0 + l1 * l1
    b = r0 * r0 + r1 * r1
    valid = (vals[1:] > vals[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    # maximize a/nL + b/nR, which minimizes nL*gini_L + nR*gini_R
    score = np.where(valid, a / n_left + b / n_right, -np.inf)
    top = score.max()
    pos, col = np.nonzero(score >= top - 1e-9 * max(1.0, abs(top)))
    best = None
    for fi, i in sorted(zip(col.tolist(), pos.tolist())):
        nl, nr = i + 1, n - i - 1
        num = int(a[i, fi]) * nr + int(b[i, fi]) * nl
        den = nl * nr
        if best is None or num * best[1] > best[0] * den:
            best = (num, den, fi, i)
    _, _, fi, i = best
    return int(features[fi]), float((vals[i, fi] + vals[i + 1, fi]) / 2.0)


def best_mse_split(X, r, idx, features, min_leaf=1):
    """Split maximizing ``S_L**2 / n_L + S_R**2 / n_R`` of the targets ``r``."""
    n = len(idx)
    if n < 2 * min_leaf or len(features) == 0:
        return None
    vals, order = _sorted_columns(X, idx, features)
    rs = r[idx][order]
    s_left = np.cumsum(rs, axis=0)[:-1]
    total = rs[:, 0].sum()
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    valid = (vals[1:] > vals[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, s_left**2 / n_left + (total - s_left) ** 2 / n_right, -np.inf)
    # argmax over the transposed matrix picks the lowest feature, then lowest position
    flat = int(np.argmax(score.T))
    fi, i = divmod(flat, n - 1)
    if score[i, fi] <= total * total / n + 1e-12 * max(1.0, abs(total * total / n)):
        return None
    return int(features[fi]), float((vals[i, fi] + vals[i + 1, fi]) / 2.0)


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def finish(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
        )


def fit_tree(X, y, max_depth=None, min_leaf: int = 1, feature_subset=None) -> Tree:
    """Greedy CART classification tree with Gini impurity.

    Parameters
    ----------
    X : array, shape (N, D)
    y : array of 0/1 labels, shape (N,)
    max_depth : int or None
        None grows until leaves are pure or unsplittable.
    min_leaf : int
        Minimum samples on each side of a split.
    feature_subset : callable, optional
        ``feature_subset(D)`` returns the feature indices to consider at a
        node (random forests draw a fresh subset per node).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("fit_tree needs a non-empty (N, D) matrix and N labels")
    d = X.shape[1]
    b = _Builder()

    def grow(idx, depth):
        p1 = float(np.mean(y[idx]))
        node = b.add([1.0 - p1, p1])
        if p1 in (0.0, 1.0) or (max_depth is not None and depth >= max_depth):
            return node
        feats = np.arange(d) if feature_subset is None else np.sort(np.asarray(feature_subset(d)))
        split = best_gini_split(X, y, idx, feats, min_leaf)
        if split is None:
            return node
        f, t = split
        go_left = X[idx, f] <= t
        b.feature[node], b.threshold[node] = f, t
        b.left[node] = grow(idx[go_left], depth + 1)
        b.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return b.finish()


def fit_regression_tree(X, r, max_depth: int = 3, min_leaf: int = 1) -> Tree:
    """Least-squares regression tree; leaf values are the mean target."""
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    b = _Builder()
    d = X.shape[1]

    def grow(idx, depth):
        node = b.add([float(np.mean(r[idx]))])
        if depth >= max_depth:
            return node
        split = best_mse_split(X, r, idx, np.arange(d), min_leaf)
        if split is None:
            return node
        f, t = split
        go_left = X[idx, f] <= t
        b.feature[node], b.threshold[node] = f, t
        b.left[node] = grow(idx[go_left], depth + 1)
        b.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return b.finish()
