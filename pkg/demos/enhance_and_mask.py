"""
Contrast enhancement and morphological lung masks
=================================================

Draws a synthetic CT-like slice, equalizes it with CLAHE and derives a lung
mask from Otsu thresholding plus morphology. Writes PGMs next to this script
(or into the directory given as the first argument).
"""

import sys
from pathlib import Path

import numpy as np

from lungkit.metrics import dice
from lungkit.morphoseg import LungMaskConfig, generate_lung_mask, label_components, otsu_threshold
from lungkit.phantoms import lung_phantom
from lungkit.preprocess import ClaheParams, clahe
from lungkit.raster import save_image

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("out_enhance")
out.mkdir(parents=True, exist_ok=True)

# a 128x128 slice: bright body, two dark ellipses, Gaussian noise
img, lungs = lung_phantom(128, rng=0)
truth = lungs[0] | lungs[1]
print("raw intensity range:", img.min(), img.max())

# CLAHE with the usual 8x8 tiles and clip limit 2
eq = clahe(img, ClaheParams(2.0, (8, 8)))
print("after CLAHE:", eq.min(), eq.max())

# the threshold is chosen exactly over all 256 levels
print("Otsu threshold:", otsu_threshold(img))

mask, masked = generate_lung_mask(img, LungMaskConfig())
print("components kept:", label_components(mask).n_components)
print(f"lung area fraction: {mask.mean():.3f}")
print(f"Dice against the drawn ellipses: {dice(mask, truth):.4f}")

for name, arr in (("raw", img), ("clahe", eq), ("mask", mask), ("masked", masked)):
    save_image(arr, out / f"{name}.pgm")
print("wrote", sorted(p.name for p in out.glob("*.pgm")), "to", out)

# the mask is a plain bool array, so numpy does the bookkeeping
rows = np.flatnonzero(mask.any(axis=1))
print("mask spans rows", rows.min(), "to", rows.max())
