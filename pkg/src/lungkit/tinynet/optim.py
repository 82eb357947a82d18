from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def adam_update(param, grad, m, v, t: int, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step with bias correction. Returns new ``(param, m, v)``."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ShapeError(f"adam shapes differ: {param.shape}, {grad.shape}, {m.shape}, {v.shape}")
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param.astype(grad.dtype, copy=False), m.astype(grad.dtype, copy=False), v.astype(grad.dtype, copy=False)


class Adam:
    """Keeps per-parameter moment estimates for a dict of named tensors."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            new, self.m[name], self.v[name] = adam_update(
                params[name], g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps
            )
            params[name][...] = new
