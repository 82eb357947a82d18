"""Synthetic images with known ground truth.

* :func:`lung_phantom` draws a bright body disk holding two dark elliptical
  "lungs" on a dark background; the analytic ellipse masks are returned.
* :func:`circle_phantoms` draws bright disks on a dark field (segmentation).
* :func:`blob_images` draws a bright or a dark blob on mid-gray (two classes).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .raster import save_image


def _to_u8(x):
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def lung_phantom(size: int = 128, rng=None, cancerous: bool = False, noise: float = 6.0):
    """One CT-like slice.

    Returns
    -------
    image : ndarray of uint8, shape (size, size)
    lungs : list of two bool masks, the drawn ellipses (left, right)
    """
    rng = np.random.default_rng(rng)
    s = size / 128.0
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    c = (size - 1) / 2.0
    body_r = 57 * s + rng.uniform(-2, 2) * s
    img = np.full((size, size), 15.0)
    body = (xx - c) ** 2 + (yy - c) ** 2 <= body_r**2
    img[body] = 170 + rng.uniform(-10, 10)
    lungs = []
    for side in (-1, 1):
        cx = c + side * (29 + rng.uniform(-1.5, 1.5)) * s
        cy = c + rng.uniform(-4, 4) * s
        ax = rng.uniform(13, 16) * s
        ay = rng.uniform(26, 33) * s
        m = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        img[m] = 40 + rng.uniform(-8, 8)
        lungs.append(m)
    if cancerous:
        # a bright nodule inside one lung
        lung = lungs[int(rng.integers(0, 2))]
        ys, xs = np.nonzero(lung)
        k = int(rng.integers(0, len(ys)))
        r = rng.uniform(2.5, 4.0) * s
        nod = ((xx - xs[k]) ** 2 + (yy - ys[k]) ** 2 <= r * r) & lung
        img[nod] = 150
    img += rng.normal(0, noise, img.shape)
    return _to_u8(img), lungs


def write_phantom_dataset(root, n: int = 60, seed: int = 0, size: int = 128):
    """Write ``n`` phantoms as PGMs under ``root/cancerous`` and ``root/normal``.

    Half of them (rounded down) are cancerous. Returns the list of written paths.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    paths = []
    for label in ("cancerous", "normal"):
        (root / label).mkdir(parents=True, exist_ok=True)
    for i in range(n):
        cancerous = i % 2 == 0 and i // 2 < n // 2
        img, _ = lung_phantom(size, rng, cancerous=cancerous)
        p = root / ("cancerous" if cancerous else "normal") / f"ph{i:04d}.pgm"
        save_image(img, p)
        paths.append(p)
    return paths


def circle_phantoms(n: int = 8, size: int = 32, seed: int = 0, noise: float = 12.0):
    """Bright disks of random centre/radius; returns ``(images uint8, masks bool)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    images, masks = [], []
    for _ in range(n):
        r = rng.uniform(0.12, 0.28) * size
        cx, cy = rng.uniform(r + 1, size - r - 1, 2)
        m = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        img = np.where(m, 190.0, 50.0) + rng.normal(0, noise, (size, size))
        images.append(_to_u8(img))
        masks.append(m)
    return np.array(images), np.array(masks)


def blob_images(n: int = 40, size: int = 32, seed: int = 0, noise: float = 10.0):
    """Class 1: a bright Gaussian blob; class 0: a dark one. Balanced, shuffled.

    Returns ``(images uint8 (n, size, size), labels int (n,))``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    labels = rng.permutation(np.arange(n) % 2)
    images = []
    for label in labels:
        cx, cy = rng.uniform(0.3, 0.7, 2) * size
        sigma = rng.uniform(0.08, 0.15) * size
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
        amp = rng.uniform(60, 100) * (1 if label == 1 else -1)
        images.append(_to_u8(128 + amp * blob + rng.normal(0, noise, (size, size))))
    return np.array(images), labels.astype(np.int64)
