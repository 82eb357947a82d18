"""Classical classifier heads over flattened CNN features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .ensemble import BoostModel, ForestModel, binomial_deviance, fit_gradient_boosting, fit_random_forest
from .svm import SvmModel, fit_svm_smo, kernel_matrix, kkt_violations, scale_gamma
from .tree import Tree, best_gini_split, fit_regression_tree, fit_tree, gini_impurity

__all__ = [
    "BoostModel",
    "ForestModel",
    "Standardizer",
    "SvmModel",
    "Tree",
    "best_gini_split",
    "binomial_deviance",
    "classic_predict",
    "fit_gradient_boosting",
    "fit_head",
    "fit_random_forest",
    "fit_regression_tree",
    "fit_svm_smo",
    "fit_tree",
    "gini_impurity",
    "head_from_container",
    "head_to_container",
    "kernel_matrix",
    "kkt_violations",
    "scale_gamma",
    "standardize_apply",
    "standardize_fit",
]


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray  # population sd; zero-variance features keep sd == 0 and are only shifted

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.mean):
            raise ShapeError(f"expected {len(self.mean)} features, got shape {X.shape}")
        return (X - self.mean) / np.where(self.sd > 0, self.sd, 1.0)


def standardize_fit(X) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("cannot standardize an empty matrix")
    return Standardizer(X.mean(axis=0), X.std(axis=0))


def standardize_apply(s: Standardizer, X) -> np.ndarray:
    return s.apply(X)


def _n_features(model) -> int:
    if isinstance(model, SvmModel):
        return model.support_vectors.shape[1] if len(model.support_vectors) else -1
    if isinstance(model, Tree):
        return -1
    return model.n_features


def classic_predict(model, X):
    """Labels (0/1) and scores for any head.

    Scores are the class-1 probability for trees and forests, ``sigmoid(F)``
    for boosting and the raw decision value for the SVM. Labels threshold the
    score at 0.5, or at 0 (its sign) for the SVM.
    """
    X = np.asarray(X, dtype=np.float64)
    d = _n_features(model)
    if X.ndim != 2 or (d >= 0 and X.shape[1] != d):
        raise ShapeError(f"model expects {d} features, got input of shape {X.shape}")
    if isinstance(model, SvmModel):
        scores = model.decision(X)
        return (scores > 0).astype(np.int64), scores
    if isinstance(model, Tree):
        scores = model.predict_proba(X)
    else:
        scores = model.score(X)
    return (scores > 0.5).astype(np.int64), scores


def fit_head(kind: str, X, y, seed: int = 0, **params):
    """Fit ``svm``, ``rf`` or ``gb`` with its defaults overridden by ``params``."""
    if kind == "svm":
        return fit_svm_smo(X, y, seed=seed, **params)
    if kind == "rf":
        return fit_random_forest(X, y, seed=seed, **params)
    if kind == "gb":
        return fit_gradient_boosting(X, y, **params)
    raise ValueError(f"unknown head {kind!r}")


def head_to_container(model, prefix: str = "head/") -> tuple[dict, dict[str, np.ndarray]]:
    """JSON-able description plus named float64 arrays for the LKMB container."""
    if isinstance(model, SvmModel):
        header = {"type": "svm", "bias": model.bias, "kernel": model.kernel, "gamma": model.gamma, "C": model.C}
        tensors = {
            "support_vectors": model.support_vectors,
            "dual_coef": model.dual_coef,
            "alpha": model.alpha,
            "y": model.y,
        }
    elif isinstance(model, ForestModel):
        header = {"type": "rf", "seed": model.seed, "n_features": model.n_features, "trees": [t.to_dict() for t in model.trees]}
        tensors = {}
    elif isinstance(model, BoostModel):
        header = {
            "type": "gb",
            "f0": model.f0,
            "learning_rate": model.learning_rate,
            "n_features": model.n_features,
            "train_deviance": model.train_deviance,
            "trees": [t.to_dict() for t in model.trees],
        }
        tensors = {}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return header, {prefix + k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}


def head_from_container(header: dict, tensors: dict[str, np.ndarray], prefix: str = "head/"):
    kind = header["type"]
    if kind == "svm":
        sv = tensors[prefix + "support_vectors"]
        return SvmModel(
            sv.reshape(len(sv), -1) if sv.size else sv,
            tensors[prefix + "dual_coef"],
            header["bias"],
            header["kernel"],
            header["gamma"],
            header["C"],
            tensors[prefix + "alpha"],
            tensors[prefix + "y"],
        )
    if kind == "rf":
        return ForestModel([Tree.from_dict(t) for t in header["trees"]], header["seed"], header["n_features"])
    if kind == "gb":
        return BoostModel(
            header["f0"],
            [Tree.from_dict(t) for t in header["trees"]],
            header["learning_rate"],
            header["n_features"],
            list(header["train_deviance"]),
        )
    raise ValueError(f"unknown head type {kind!r}")
