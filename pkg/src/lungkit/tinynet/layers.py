"""Forward and backward kernels for the closed layer set.

Tensors are ``[batch, channels, height, width]`` arrays; dense layers work on
``[batch, features]``. Every function is dtype-preserving so gradient checks
can run in float64 while training runs in float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

BCE_EPS = 1e-7


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values entering {where}")


# -- convolution ---------------------------------------------------------------------------


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        lo, hi = _same_pads(size, k, stride)
        size = size + lo + hi
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    return (size - k) // stride + 1


def _pad_input(x, kh, kw, stride, padding):
    if padding == "valid":
        return x, (0, 0, 0, 0)
    top, bottom = _same_pads(x.shape[2], kh, stride)
    left, right = _same_pads(x.shape[3], kw, stride)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return x, (top, bottom, left, right)


def _im2col(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    # rows ordered (n, i, j); columns ordered (c, ki, kj) to match w.reshape(F, -1)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d_apply(x, w, b, stride: int = 1, padding: str = "same") -> np.ndarray:
    """2-D cross-correlation.

    Parameters
    ----------
    x : ndarray, shape (N, C, H, W)
    w : ndarray, shape (F, C, kH, kW)
    b : ndarray, shape (F,)
    stride : int
    padding : {"valid", "same"}
        ``same`` zero-pads so the output is ``ceil(H / stride)``; an odd
        padding total puts the extra pixel at the bottom/right.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d shapes do not fit: x {x.shape}, w {w.shape}, b {b.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    check_finite(x, "conv2d")
    f, _, kh, kw = w.shape
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {x.shape[2:]} with {padding} padding")
    xp, _ = _pad_input(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(x.shape[0], ho, wo, f).transpose(0, 3, 1, 2)


def conv2d_grad(x, w, dy, stride: int = 1, padding: str = "same"):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_apply` given upstream ``dy``."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if dy.shape != (n, f, ho, wo):
        raise ShapeError(f"upstream gradient {dy.shape} does not match conv output {(n, f, ho, wo)}")
    xp, (top, _, left, _) = _pad_input(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dy_mat.T @ cols).reshape(w.shape)
    db = dy_mat.sum(axis=0)
    dcols = (dy_mat @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    dx = dxp[:, :, top : top + h, left : left + wd]
    return dx, dw, db


def tconv2d_apply(x, w, b=None) -> np.ndarray:
    """Transposed convolution with a 2x2 kernel and stride 2.

    ``w`` has shape (C_in, C_out, 2, 2); each input value stamps its
    weighted kernel into a disjoint 2x2 output block, doubling H and W.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (2, 2) or x.shape[1] != w.shape[0]:
        raise ShapeError(f"tconv2d shapes do not fit: x {x.shape}, w {w.shape}")
    check_finite(x, "tconv2d")
    n, _, h, wd = x.shape
    co = w.shape[1]
    y = np.tensordot(x, w, axes=([1], [0]))  # (N, H, W, Co, 2, 2)
    y = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, co, 2 * h, 2 * wd)
    if b is not None:
        y = y + b[None, :, None, None]
    return y


def tconv2d_grad(x, w, dy):
    """Gradients ``(dx, dw, db)`` of :func:`tconv2d_apply`."""
    n, _, h, wd = x.shape
    co = w.shape[1]
    if dy.shape != (n, co, 2 * h, 2 * wd):
        raise ShapeError(f"upstream gradient {dy.shape} does not match tconv output")
    d = dy.reshape(n, co, h, 2, wd, 2)
    dx = np.einsum("nohawb,coab->nchw", d, w, optimize=True)
    dw = np.einsum("nchw,nohawb->coab", x, d, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


# -- pooling -------------------------------------------------------------------------------


def maxpool2d_apply(x, window: int = 2, stride: int = 2):
    """2x2/2 max pooling.

    Odd heights/widths are padded at the bottom/right with -inf. Returns the
    pooled tensor and the routing (flat index of the winner inside each
    window, first maximum in row-major order on ties).
    """
    if window != 2 or stride != 2:
        raise ValueError("only 2x2 windows with stride 2 are supported")
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    ho, wo = x.shape[2] // 2, x.shape[3] // 2
    win = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    route = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, route[..., None], axis=-1)[..., 0]
    return out, route


def maxpool2d_grad(dy, route, input_shape):
    n, c, h, w = input_shape
    ho, wo = dy.shape[2:]
    win = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(win, route[..., None], dy[..., None], axis=-1)
    full = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    return full[:, :, :h, :w]


# -- dense / pointwise -----------------------------------------------------------------------


def dense_apply(x, w, b) -> np.ndarray:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense shapes do not fit: x {x.shape}, w {w.shape}, b {b.shape}")
    check_finite(x, "dense")
    return x @ w + b


def dense_grad(x, w, dy):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_apply(x, kind: str):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(x, y, dy, kind: str):
    """Backward pass; ``y`` is the forward output. ReLU'(0) is taken as 0."""
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    raise ValueError(f"unknown activation {kind!r}")


def dropout_apply(x, rate: float, mode: str, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(output, keep_mask)``; the mask is None when inactive."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    return x * keep / x.dtype.type(1 - rate), keep


def dropout_grad(dy, keep, rate: float):
    if keep is None:
        return dy
    return dy * keep / dy.dtype.type(1 - rate)


# -- batch normalization ---------------------------------------------------------------------


def _bn_axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _bn_view(p, x):
    return p.reshape(1, -1, 1, 1) if x.ndim == 4 else p.reshape(1, -1)


def batchnorm_apply(x, gamma, beta, mode, running_mean, running_var, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization.

    In train mode the batch statistics normalize ``x`` and the running
    statistics are updated in place (``running = momentum * running +
    (1 - momentum) * batch``). Returns ``(y, cache)``; cache feeds
    :func:`batchnorm_grad`.
    """
    axes = _bn_axes(x)
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batch normalization in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _bn_view(mean, x)) * _bn_view(inv_std, x)
    y = _bn_view(gamma, x) * xhat + _bn_view(beta, x)
    return y.astype(x.dtype, copy=False), (xhat, inv_std, mode)


def batchnorm_grad(dy, gamma, cache):
    xhat, inv_std, mode = cache
    axes = _bn_axes(dy)
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * _bn_view(gamma, dy)
    if mode != "train":
        return dxhat * _bn_view(inv_std, dy), dgamma, dbeta
    m = dy.size // dy.shape[1]
    dx = (
        _bn_view(inv_std, dy)
        / m
        * (m * dxhat - _bn_view(dxhat.sum(axis=axes), dy) - xhat * _bn_view(np.sum(dxhat * xhat, axis=axes), dy))
    )
    return dx, dgamma, dbeta


# -- loss ------------------------------------------------------------------------------------


def bce_loss(p, y) -> float:
    """Mean binary cross-entropy with ``p`` clamped to ``[1e-7, 1 - 1e-7]``."""
    p = np.asarray(p)
    y = np.asarray(y)
    if p.size != y.size:
        raise ShapeError(f"{p.size} predictions but {y.size} targets")
    p = np.clip(p.reshape(-1).astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    y = y.reshape(-1).astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def bce_grad(p, y):
    """d(bce)/dp (zero where the clamp is active)."""
    p = np.asarray(p)
    y = np.asarray(y).reshape(p.shape).astype(p.dtype)
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    g = (pc - y) / (pc * (1 - pc) * p.size)
    return np.where((p < BCE_EPS) | (p > 1 - BCE_EPS), 0, g).astype(p.dtype)


def bce_logit_grad(p, y):
    """Gradient of bce(sigmoid(z)) with respect to the logits ``z``: ``(p - y) / count``."""
    p = np.asarray(p)
    y = np.asarray(y).reshape(p.shape).astype(p.dtype)
    return (p - y) / p.dtype.type(p.size)
