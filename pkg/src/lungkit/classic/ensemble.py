from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tree import Tree, fit_regression_tree, fit_tree


@dataclass
class ForestModel:
    trees: list[Tree]
    seed: int
    n_features: int

    def score(self, X) -> np.ndarray:
        """Mean class-1 probability over the trees."""
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


def _max_features(mode, d: int) -> int:
    if mode in ("sqrt", "auto"):
        return max(1, int(np.floor(math.sqrt(d) + 0.5)))
    if mode is None:
        return d
    return max(1, min(d, int(mode)))


def fit_random_forest(X, y, n_estimators: int = 100, max_features="sqrt", seed: int = 0, max_depth=None) -> ForestModel:
    """Bagged Gini trees with a fresh random feature subset at every node.

    Tree ``t`` draws its bootstrap sample and feature subsets from a generator
    seeded with ``(seed, t)``, so trees do not depend on each other's draws.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    n, d = X.shape
    if n < 2:
        raise ValueError("a random forest needs at least 2 samples")
    k = _max_features(max_features, d)
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng([seed, t])
        boot = rng.integers(0, n, size=n)
        subset = (lambda dim, rng=rng: rng.choice(dim, size=k, replace=False)) if k < d else None
        trees.append(fit_tree(X[boot], y[boot], max_depth=max_depth, feature_subset=subset))
    return ForestModel(trees, seed, d)


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def binomial_deviance(y, f) -> float:
    """Mean negative log-likelihood of labels ``y`` under logits ``f``."""
    y = np.asarray(y, dtype=np.float64)
    # log(1 + exp(f)) - y f, computed stably
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


@dataclass
class BoostModel:
    f0: float
    trees: list[Tree]
    learning_rate: float
    n_features: int
    train_deviance: list[float] = field(default_factory=list)

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        f = np.full(len(X), self.f0)
        for tree in self.trees:
            f += self.learning_rate * tree.predict_value(X)[:, 0]
        return f

    def score(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))


def fit_gradient_boosting(X, y, n_stages: int = 100, lr: float = 0.1, max_depth: int = 3) -> BoostModel:
    """Gradient boosting on the binomial deviance.

    Starts from the log-odds of the class-1 rate. Each stage fits a
    least-squares tree to the residuals ``y - sigmoid(F)``, replaces every
    leaf value with the Newton step ``sum(r) / sum(p (1 - p))`` over that
    leaf, and adds ``lr`` times the tree to ``F``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.float64)
    pos = y.mean()
    if pos in (0.0, 1.0):
        raise ValueError("gradient boosting needs both classes in the training labels")
    f0 = float(np.log(pos / (1 - pos)))
    f = np.full(len(y), f0)
    trees = []
    deviance = [binomial_deviance(y, f)]
    for _ in range(n_stages):
        p = _sigmoid(f)
        resid = y - p
        tree = fit_regression_tree(X, resid, max_depth=max_depth)
        leaves = tree.apply(X)
        num = np.bincount(leaves, weights=resid, minlength=tree.n_nodes)
        hess = np.bincount(leaves, weights=p * (1 - p), minlength=tree.n_nodes)
        newton = np.where(hess > 1e-150, num / np.where(hess > 1e-150, hess, 1.0), 0.0)
        is_leaf = tree.feature < 0
        tree.value = np.where(is_leaf, newton, 0.0)[:, None]
        f = f + lr * tree.value[leaves, 0]
        trees.append(tree)
        deviance.append(binomial_deviance(y, f))
    return BoostModel(f0, trees, lr, X.shape[1], deviance)
