"""Built-in oracle and invariant checks behind ``lungkit selftest``.

Each check compares a library routine with a small independent reference
(naive loops, exhaustive search, finite differences) on seeded random data.
"""

from __future__ import annotations

import io
import tempfile
import time
from collections import deque
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import metrics, morphoseg
from .harness import make_folds
from .preprocess import ClaheParams, clahe
from .tinynet import build_mini_cnn, load_bundle, save_bundle, train_model
from .tinynet import layers as L
from .tinynet.bundle import ModelBundle
from .tinynet.gradcheck import numeric_grad, rel_error
from .tinynet.network import init_weights

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _naive_dilate(m, se):
    h, w = m.shape
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            for dx, dy in se.offsets:
                sy, sx = y - dy, x - dx
                if 0 <= sy < h and 0 <= sx < w and m[sy, sx]:
                    out[y, x] = True
                    break
    return out


def _naive_erode(m, se):
    h, w = m.shape
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(0 <= y + dy < h and 0 <= x + dx < w and m[y + dy, x + dx] for dx, dy in se.offsets)
    return out


def _bfs_count(m):
    seen = np.zeros_like(m)
    h, w = m.shape
    count = 0
    for y in range(h):
        for x in range(w):
            if m[y, x] and not seen[y, x]:
                count += 1
                q = deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and m[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                q.append((ny, nx))
    return count


@check
def morphology_vs_naive(rng):
    for _ in range(10):
        m = rng.random((24, 24)) < rng.uniform(0.2, 0.8)
        se = morphoseg.disk(int(rng.integers(1, 4)))
        if not np.array_equal(morphoseg.dilate(m, se), _naive_dilate(m, se)):
            return False
        if not np.array_equal(morphoseg.erode(m, se), _naive_erode(m, se)):
            return False
    return True


@check
def labeling_vs_flood_fill(rng):
    for _ in range(30):
        m = rng.random((20, 20)) < rng.uniform(0.2, 0.6)
        if morphoseg.label_components(m, 8).n_components != _bfs_count(m):
            return False
    return True


@check
def otsu_vs_exhaustive(rng):
    for _ in range(30):
        img = rng.integers(0, int(rng.integers(2, 257)), size=(12, 12)).astype(np.uint8)
        v = img.ravel().astype(int)
        best, best_t = Fraction(-1), None
        for t in range(256):
            lo, hi = v[v <= t], v[v > t]
            if len(lo) == 0 or len(hi) == 0:
                continue
            score = len(lo) * len(hi) * (Fraction(int(lo.sum()), len(lo)) - Fraction(int(hi.sum()), len(hi))) ** 2
            if score > best:
                best, best_t = score, t
        expected = int(v[0]) if best_t is None else best_t
        if morphoseg.otsu_threshold(img) != expected:
            return False
    return True


@check
def dice_iou_identity(rng):
    for _ in range(100):
        a, b = rng.random((8, 8)) < 0.5, rng.random((8, 8)) < 0.5
        j = metrics.iou(a, b)
        if abs(metrics.dice(a, b) - 2 * j / (1 + j)) > 1e-12:
            return False
    return True


@check
def auc_vs_concordance(rng):
    for _ in range(20):
        n = int(rng.integers(4, 60))
        y = rng.permutation(np.arange(n) % 2)
        s = rng.integers(0, 6, n).astype(float)
        pos, neg = s[y == 1], s[y == 0]
        conc = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))
        if abs(metrics.roc_auc(s, y) - conc) > 1e-12:
            return False
    return True


@check
def confusion_fixture(rng):
    r = metrics.classification_report(metrics.ConfusionCounts(tp=2, fp=1, fn=1, tn=6))
    return r == {"accuracy": 0.8, "precision": 2 / 3, "recall": 2 / 3, "f1": 2 / 3}


@check
def clahe_single_tile(rng):
    out = clahe(np.array([[0, 0], [255, 255]], np.uint8), ClaheParams(1000.0, (1, 1)))
    return out.tolist() == [[128, 128], [255, 255]]


@check
def layer_gradients(rng):
    x = rng.normal(size=(2, 2, 5, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(2, 3, 5, 4))
    dx, dw, _ = L.conv2d_grad(x, w, r)
    f = lambda: float(np.sum(L.conv2d_apply(x, w, b) * r))  # noqa: E731
    ok = rel_error(dx, numeric_grad(f, x)) <= 1e-4 and rel_error(dw, numeric_grad(f, w)) <= 1e-4
    wt = rng.normal(size=(2, 3, 2, 2))
    rt = rng.normal(size=(2, 3, 10, 8))
    dxt, dwt, _ = L.tconv2d_grad(x, wt, rt)
    ft = lambda: float(np.sum(L.tconv2d_apply(x, wt) * rt))  # noqa: E731
    ok &= rel_error(dxt, numeric_grad(ft, x)) <= 1e-4 and rel_error(dwt, numeric_grad(ft, wt)) <= 1e-4
    z = rng.normal(size=(3, 4))
    y = (rng.random((3, 4)) > 0.5).astype(float)
    fz = lambda: L.bce_loss(L.sigmoid(z), y)  # noqa: E731
    ok &= rel_error(L.bce_logit_grad(L.sigmoid(z), y), numeric_grad(fz, z)) <= 1e-6
    return bool(ok)


@check
def bundle_round_trip(rng):
    spec = build_mini_cnn((1, 16, 16), (4, 8), 8)
    bundle = ModelBundle(spec, init_weights(spec, 3), {"seed": 3})
    with tempfile.TemporaryDirectory() as d:
        p1, p2 = Path(d) / "a.lkmb", Path(d) / "b.lkmb"
        save_bundle(bundle, p1)
        save_bundle(load_bundle(p1), p2)
        return p1.read_bytes() == p2.read_bytes()


@check
def folds_partition(rng):
    labels = rng.integers(0, 2, 57)
    labels[:10] = [0, 1] * 5
    f = make_folds(labels, 5, 1)
    sizes = np.bincount(f.assignment, minlength=5)
    return sizes.max() - sizes.min() <= 1 and len(f.assignment) == 57


@check
def training_reproducible(rng):
    x = rng.normal(size=(8, 1, 8, 8)).astype(np.float32)
    y = np.arange(8) % 2
    spec = build_mini_cnn((1, 8, 8), (2,), 4)
    from .tinynet import TrainConfig

    cfg = TrainConfig(batch_size=4, max_epochs=2, val_fraction=0.25, seed=5)
    a, _ = train_model(spec, (x, y), cfg)
    b, _ = train_model(spec, (x, y), cfg)
    return all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def run_selftest(seed: int = 0, out=None) -> tuple[int, int]:
    """Run every check; print one line each. Returns ``(passed, failed)``."""
    out = out or io.StringIO()
    passed = failed = 0
    for fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok = bool(fn(np.random.default_rng(seed)))
            err = ""
        except Exception as exc:  # a crashing check is a failed check
            ok, err = False, f" ({type(exc).__name__}: {exc})"
        passed += ok
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {fn.__name__}  [{time.perf_counter() - t0:.2f}s]{err}", file=out)
    print(f"{passed} passed, {failed} failed", file=out)
    return passed, failed
