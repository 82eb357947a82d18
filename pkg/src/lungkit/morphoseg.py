"""Binary morphology and the classical lung-mask pipeline.

Conventions used throughout:

* masks are 2-D ``bool`` arrays indexed ``[y, x]``;
* structuring-element offsets are ``(dx, dy)`` pairs;
* pixels outside the image are background for both dilation and erosion;
* foreground components use 8-connectivity, background (hole filling) uses 4.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LungkitWarning, ShapeError
from .raster import as_raster

DARK = "dark_foreground"
BRIGHT = "bright_foreground"


@dataclass(frozen=True)
class StructuringElement:
    radius: int
    offsets: tuple[tuple[int, int], ...]

    @classmethod
    def disk(cls, radius: int) -> "StructuringElement":
        """All integer offsets with ``dx**2 + dy**2 <= radius**2``."""
        if radius < 0:
            raise ValueError(f"radius must be >= 0, got {radius}")
        offsets = tuple(
            (dx, dy)
            for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)
            if dx * dx + dy * dy <= radius * radius
        )
        return cls(radius, offsets)

    @property
    def extent(self) -> int:
        return max((max(abs(dx), abs(dy)) for dx, dy in self.offsets), default=0)


def disk(radius: int) -> StructuringElement:
    return StructuringElement.disk(radius)


@dataclass
class LabelMap:
    labels: np.ndarray  # int32, 0 = background
    n_components: int

    @property
    def shape(self):
        return self.labels.shape


def _as_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def otsu_threshold(img) -> int:
    """Otsu threshold of an 8-bit image.

    Returns the ``t`` maximizing the between-class variance of the classes
    ``v <= t`` and ``v > t``; ties go to the smallest ``t``. The comparison
    is done in exact integer arithmetic, so equal objectives really tie. A
    constant image returns its value.
    """
    img = as_raster(img)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.int64)
    nonzero = np.flatnonzero(hist)
    if len(nonzero) == 1:
        return int(nonzero[0])
    total_n = int(hist.sum())
    total_s = int(np.dot(hist, np.arange(256)))
    # between-class variance * N^2 == (S0*n1 - S1*n0)^2 / (n0*n1)
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n1 - (total_s - s0) * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(img, t: int, polarity: str = DARK) -> np.ndarray:
    """Threshold ``img``: dark foreground is ``v <= t``, bright is ``v > t``."""
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {t}")
    img = as_raster(img)
    if polarity in (DARK, "dark"):
        return img <= t
    if polarity in (BRIGHT, "bright"):
        return img > t
    raise ValueError(f"unknown polarity {polarity!r}")


def _shifted(padded: np.ndarray, pad: int, dx: int, dy: int, shape) -> np.ndarray:
    h, w = shape
    return padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]


def dilate(m, se: StructuringElement) -> np.ndarray:
    """``out(x, y) = OR over se of m(x - dx, y - dy)``."""
    m = _as_mask(m)
    pad = se.extent
    padded = np.pad(m, pad, constant_values=False)
    out = np.zeros_like(m)
    for dx, dy in se.offsets:
        out |= _shifted(padded, pad, -dx, -dy, m.shape)
    return out


def erode(m, se: StructuringElement) -> np.ndarray:
    """``out(x, y) = AND over se of m(x + dx, y + dy)``."""
    m = _as_mask(m)
    pad = se.extent
    padded = np.pad(m, pad, constant_values=False)
    out = np.ones_like(m)
    for dx, dy in se.offsets:
        out &= _shifted(padded, pad, dx, dy, m.shape)
    return out


def close(m, se: StructuringElement) -> np.ndarray:
    """Morphological closing: dilation followed by erosion."""
    return erode(dilate(m, se), se)


def _row_runs(row: np.ndarray):
    padded = np.concatenate(([False], row, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return edges[0::2], edges[1::2]  # [start, stop)


def label_components(m, connectivity: int = 8) -> LabelMap:
    """Label connected foreground components.

    Run-length union-find. Labels are numbered 1..n in the raster-scan order in
    which each component's first pixel is met.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = _as_mask(m)
    height, _ = m.shape
    reach = 1 if connectivity == 8 else 0

    parent: list[int] = []

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    runs = []  # (y, start, stop)
    prev: list[tuple[int, int, int]] = []  # (start, stop, run id) of previous row
    for y in range(height):
        starts, stops = _row_runs(m[y])
        cur = []
        k = 0
        for s, e in zip(starts.tolist(), stops.tolist()):
            rid = len(runs)
            runs.append((y, s, e))
            parent.append(rid)
            # previous-row runs overlapping [s - reach, e + reach)
            while k < len(prev) and prev[k][1] + reach <= s:
                k += 1
            j = k
            while j < len(prev) and prev[j][0] < e + reach:
                ra, rb = find(prev[j][2]), find(rid)
                if ra != rb:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
                j += 1
            cur.append((s, e, rid))
        prev = cur

    labels = np.zeros(m.shape, dtype=np.int32)
    root_label: dict[int, int] = {}
    for rid, (y, s, e) in enumerate(runs):
        root = find(rid)
        if root not in root_label:
            # the root is the component's smallest run id, i.e. its first run in scan order
            root_label[root] = len(root_label) + 1
        labels[y, s:e] = root_label[root]
    return LabelMap(labels, len(root_label))


def clear_border(m) -> np.ndarray:
    """Remove every 8-connected foreground component that touches the image edge."""
    m = _as_mask(m)
    lm = label_components(m, 8)
    edge = np.concatenate((lm.labels[0], lm.labels[-1], lm.labels[:, 0], lm.labels[:, -1]))
    touching = np.unique(edge[edge > 0])
    return m & ~np.isin(lm.labels, touching)


def select_largest(lm: LabelMap, k: int = 2) -> np.ndarray:
    """Keep the ``k`` largest components (ties: smaller label wins).

    Warns with :class:`LungkitWarning` when fewer than ``k`` components exist.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    areas = np.bincount(lm.labels.ravel(), minlength=lm.n_components + 1)[1:]
    if lm.n_components < k:
        warnings.warn(
            f"only {lm.n_components} component(s) found, fewer than the {k} requested",
            LungkitWarning,
            stacklevel=2,
        )
    order = sorted(range(1, lm.n_components + 1), key=lambda lab: (-int(areas[lab - 1]), lab))
    return np.isin(lm.labels, order[:k])


def fill_holes(m) -> np.ndarray:
    """Fill background regions (4-connected) that do not reach the image edge."""
    m = _as_mask(m)
    bg = label_components(~m, 4)
    edge = np.concatenate((bg.labels[0], bg.labels[-1], bg.labels[:, 0], bg.labels[:, -1]))
    outside = np.isin(bg.labels, np.unique(edge[edge > 0]))
    return ~outside


def apply_mask(img, m) -> np.ndarray:
    img = as_raster(img)
    m = _as_mask(m)
    if img.shape != m.shape:
        raise ShapeError(f"image {img.shape} and mask {m.shape} differ in size")
    return np.where(m, img, 0).astype(np.uint8)


@dataclass(frozen=True)
class LungMaskConfig:
    polarity: str = DARK
    r_dilate: int = 5
    r_erode: int = 4
    r_close: int = 10
    keep: int = 2

    def __post_init__(self):
        if self.polarity not in (DARK, BRIGHT, "dark", "bright"):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        for name in ("r_dilate", "r_erode", "r_close"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.keep < 1:
            raise ValueError("keep must be >= 1")


def generate_lung_mask(img, cfg: LungMaskConfig = LungMaskConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Run the nine-step lung segmentation and return ``(mask, masked_image)``.

    Otsu threshold, binarize, clear border, dilate, label (8-connected), keep
    the ``cfg.keep`` largest components, erode, close, fill holes, and finally
    zero everything outside the mask.
    """
    img = as_raster(img)
    t = otsu_threshold(img)
    b = binarize(img, t, cfg.polarity)
    b = clear_border(b)
    b = dilate(b, disk(cfg.r_dilate))
    lm = label_components(b, 8)
    if lm.n_components == 0:
        warnings.warn("no candidate lung components survived border clearing", LungkitWarning, stacklevel=2)
        empty = np.zeros_like(b)
        return empty, apply_mask(img, empty)
    b = select_largest(lm, cfg.keep)
    b = erode(b, disk(cfg.r_erode))
    b = close(b, disk(cfg.r_close))
    b = fill_holes(b)
    if not b.any():
        warnings.warn("lung mask is empty after erosion", LungkitWarning, stacklevel=2)
    return b, apply_mask(img, b)
