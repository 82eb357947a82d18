"""Contrast enhancement (CLAHE), rescaling and intensity normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .raster import as_raster

BINS = 256


@dataclass(frozen=True)
class ClaheParams:
    clip_limit: float = 2.0
    grid: tuple[int, int] = (8, 8)  # (tiles_x, tiles_y)

    def __post_init__(self):
        if not self.clip_limit >= 1.0:
            raise ValueError(f"clip_limit must be >= 1.0, got {self.clip_limit}")
        tx, ty = self.grid
        if tx < 1 or ty < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.grid}")


@dataclass(frozen=True)
class ResizeSpec:
    target_w: int
    target_h: int
    kind: str = "bilinear"  # "bilinear" for images, "nearest" for masks

    def __post_init__(self):
        if self.target_w <= 0 or self.target_h <= 0:
            raise ValueError(f"target dimensions must be positive, got {self.target_w}x{self.target_h}")
        if self.kind not in ("bilinear", "nearest"):
            raise ValueError(f"unknown resize kind {self.kind!r}")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _tile_edges(length: int, n: int) -> np.ndarray:
    # equal tiles of length // n, the last one absorbs the remainder
    base = length // n
    edges = np.arange(n + 1) * base
    edges[-1] = length
    return edges


def _tile_mapping(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    n = tile.size
    hist = np.bincount(tile.ravel(), minlength=BINS).astype(np.int64)
    limit = math.ceil(clip_limit * n / BINS)
    excess = int(np.sum(np.maximum(hist - limit, 0)))
    hist = np.minimum(hist, limit)
    hist += excess // BINS
    hist[: excess % BINS] += 1
    cdf = np.cumsum(hist)
    return _round_half_up(255.0 * cdf / n)


def _interp_axis(length: int, edges: np.ndarray):
    """Lower/upper tile index and upper weight for every pixel along one axis."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(length, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    weight = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, weight


def clahe(img, params: ClaheParams = ClaheParams()) -> np.ndarray:
    """Contrast limited adaptive histogram equalization.

    The image is cut into ``tiles_x * tiles_y`` tiles (the last row/column of
    tiles takes the remainder pixels). Each tile histogram is clipped at
    ``ceil(clip_limit * n / 256)``, the clipped excess is spread evenly over
    all bins (leftover counts go one per bin from bin 0), and the tile's
    mapping is ``round(255 * cdf(v) / n)``. Output pixels blend the mappings of
    the four nearest tile centres bilinearly, with replication past the
    outermost centres.

    Parameters
    ----------
    img : ndarray of uint8, shape (H, W)
    params : ClaheParams

    Returns
    -------
    ndarray of uint8, shape (H, W)
    """
    img = as_raster(img)
    height, width = img.shape
    tx, ty = params.grid
    if width < tx or height < ty:
        raise ShapeError(f"image {width}x{height} is smaller than the {tx}x{ty} tile grid")
    xe = _tile_edges(width, tx)
    ye = _tile_edges(height, ty)
    maps = np.empty((ty, tx, BINS))
    for j in range(ty):
        for i in range(tx):
            maps[j, i] = _tile_mapping(img[ye[j] : ye[j + 1], xe[i] : xe[i + 1]], params.clip_limit)

    x0, x1, wx = _interp_axis(width, xe)
    y0, y1, wy = _interp_axis(height, ye)
    v = img.astype(np.intp)
    X0, X1, WX = x0[None, :], x1[None, :], wx[None, :]
    Y0, Y1, WY = y0[:, None], y1[:, None], wy[:, None]
    top = (1 - WX) * maps[Y0, X0, v] + WX * maps[Y0, X1, v]
    bottom = (1 - WX) * maps[Y1, X0, v] + WX * maps[Y1, X1, v]
    out = (1 - WY) * top + WY * bottom
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def resize(img, spec: ResizeSpec) -> np.ndarray:
    """Rescale a raster (bilinear) or a mask (nearest) to ``spec``'s size.

    Destination pixel ``x`` maps to source ``x * width / target_w``. Nearest
    takes the floor of that; bilinear samples at the pixel centre,
    ``(x + 0.5) * width / target_w - 0.5``, clamped to the image.
    """
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    height, width = arr.shape
    tw, th = spec.target_w, spec.target_h
    if spec.kind == "nearest":
        xs = (np.arange(tw) * width) // tw
        ys = (np.arange(th) * height) // th
        return arr[ys[:, None], xs[None, :]].copy()

    if arr.dtype == np.bool_:
        raise ShapeError("binary masks must be resized with kind='nearest'")
    src = arr.astype(np.float64)

    def axis(n_dst, n_src):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0, n_src - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    x0, x1, fx = axis(tw, width)
    y0, y1, fy = axis(th, height)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy[:, None]) + bottom * fy[:, None]
    if arr.dtype == np.uint8:
        return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)
    return out.astype(arr.dtype)


def normalize(img) -> np.ndarray:
    """Scale 8-bit intensities to [0, 1] by dividing by 255."""
    return as_raster(img).astype(np.float64) / 255.0


def preprocess_image(img, params: ClaheParams = ClaheParams(), size: int = 128) -> np.ndarray:
    """CLAHE, bilinear resize to ``size x size``, then normalize."""
    enhanced = clahe(img, params)
    return normalize(resize(enhanced, ResizeSpec(size, size, "bilinear")))
