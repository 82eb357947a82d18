"""Soft-margin SVM trained with simplified SMO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if kernel == "linear":
        K = A @ B.T
    elif kernel == "rbf":
        sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
        K = np.exp(-gamma * np.maximum(sq, 0.0))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    if not np.all(np.isfinite(K)):
        raise FloatingPointError("non-finite kernel values")
    return K


def scale_gamma(X) -> float:
    """``1 / (D * Var(X))`` with the variance taken over every matrix element."""
    X = np.asarray(X, dtype=np.float64)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i of the support vectors
    bias: float
    kernel: str
    gamma: float
    C: float
    alpha: np.ndarray  # all training multipliers, kept for feasibility checks
    y: np.ndarray  # training labels in {-1, +1}

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.bias)
        return kernel_matrix(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.bias


def _signed(y) -> np.ndarray:
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {0, 1}:
        return np.where(y == 1, 1.0, -1.0)
    if vals <= {-1, 1}:
        return y.astype(np.float64)
    raise ValueError(f"labels must be 0/1 or -1/+1, got {sorted(vals)}")


def _snap(a: float, C: float) -> float:
    eps = 1e-12 * C
    if a < eps:
        return 0.0
    if a > C - eps:
        return C
    return a


def fit_svm_smo(
    X,
    y,
    C: float = 1.0,
    kernel: str = "rbf",
    gamma="scale",
    tol: float = 1e-3,
    max_passes: int = 20,
    seed: int = 0,
    max_iter: int = 100_000,
) -> SvmModel:
    """Train a binary SVM on the dual with simplified SMO.

    Sweeps the training set; every example whose KKT condition is violated by
    more than ``tol`` is paired with a uniformly drawn partner and the
    two-variable subproblem is solved in closed form, clipped to ``[0, C]``.
    A partner that allows no progress (for instance one pinned at a bound) is
    replaced by a fresh draw, up to ``n - 1`` draws per violator.
    Stops after ``max_passes`` consecutive sweeps without a change (or
    ``max_iter`` sweeps in total).

    ``y`` may be 0/1 or -1/+1. ``gamma="scale"`` uses :func:`scale_gamma`.
    """
    X = np.asarray(X, dtype=np.float64)
    ys = _signed(y)
    n = len(ys)
    if len(np.unique(ys)) < 2:
        raise ValueError("SVM training needs both classes")
    g = scale_gamma(X) if gamma == "scale" else float(gamma)
    K = kernel_matrix(X, X, kernel, g)
    rng = np.random.default_rng(seed)
    alpha = np.zeros(n)
    b = 0.0
    f = np.zeros(n)  # decision values without bias: K @ (alpha * y)
    def step(i, j, e_i) -> bool:
        nonlocal b
        e_j = f[j] + b - ys[j]
        ai, aj = alpha[i], alpha[j]
        if ys[i] != ys[j]:
            lo, hi = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - C), min(C, ai + aj)
        if hi - lo < 1e-12:
            return False
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= 0:
            return False
        aj_new = min(hi, max(lo, aj - ys[j] * (e_i - e_j) / eta))
        if abs(aj_new - aj) < 1e-12:
            return False
        ai_new = ai + ys[i] * ys[j] * (aj - aj_new)
        # snap rounding residue onto the box so bound multipliers are recognized as such
        ai_new, aj_new = _snap(ai_new, C), _snap(aj_new, C)
        d_i, d_j = ys[i] * (ai_new - ai), ys[j] * (aj_new - aj)
        b1 = b - e_i - d_i * K[i, i] - d_j * K[i, j]
        b2 = b - e_j - d_i * K[i, j] - d_j * K[j, j]
        if 0 < ai_new < C:
            b = b1
        elif 0 < aj_new < C:
            b = b2
        else:
            b = (b1 + b2) / 2.0
        alpha[i], alpha[j] = ai_new, aj_new
        f[:] += d_i * K[:, i] + d_j * K[:, j]
        return True

    passes = sweeps = 0
    while passes < max_passes and sweeps < max_iter:
        changed = 0
        for i in range(n):
            e_i = f[i] + b - ys[i]
            r_i = ys[i] * e_i
            if not ((r_i < -tol and alpha[i] < C) or (r_i > tol and alpha[i] > 0)):
                continue
            # redraw the partner until a step makes progress (at most n - 1 draws)
            for _ in range(n - 1):
                j = int(rng.integers(0, n - 1))
                j += j >= i
                if step(i, j, e_i):
                    changed += 1
                    break
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0
    alpha = np.clip(alpha, 0.0, C)
    sv = alpha > 0
    return SvmModel(X[sv].copy(), (alpha * ys)[sv], float(b), kernel, g, float(C), alpha, ys)


def kkt_violations(model: SvmModel, X) -> np.ndarray:
    """Per-sample KKT violation of a trained model on its training set."""
    margin = model.y * model.decision(X)
    a, C = model.alpha, model.C
    viol = np.zeros_like(margin)
    at_zero = a <= 0
    at_c = a >= C
    free = ~at_zero & ~at_c
    viol[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    viol[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    viol[free] = np.abs(margin[free] - 1.0)
    return viol
