"""Grayscale image I/O and dataset manifests.

Images are plain numpy arrays: a raster is a 2-D ``uint8`` array of shape
``(height, width)``, row-major with the origin at the top-left pixel, and a
binary mask is a 2-D ``bool`` array on the same grid.

Two on-disk formats are accepted: binary PGM (``P5``, maxval 255), which is
the native format, and 8-bit PNG read through Pillow. Colour PNGs are reduced
to gray with the integer BT.601 luma rule ``round(0.299 R + 0.587 G + 0.114 B)``
(round half up).
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ImageFormatError, ManifestError

IMAGE_SUFFIXES = (".pgm", ".png")
LABELS = {"cancerous": 1, "normal": 0}


def as_raster(img) -> np.ndarray:
    """Validate ``img`` as a raster and return it as a ``uint8`` array."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise ImageFormatError(f"raster must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        return np.where(arr, 255, 0).astype(np.uint8)
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.round(arr)):
            raise ImageFormatError("raster intensities must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def luma(rgb: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma of an ``(..., 3)`` uint8 array, rounded half up."""
    rgb = np.asarray(rgb, dtype=np.int64)
    weighted = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((weighted + 500) // 1000).astype(np.uint8)


def _read_pgm(data: bytes, path: Path) -> np.ndarray:
    # header: magic, width, height, maxval, separated by whitespace; '#' starts a comment
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise ImageFormatError(f"{path}: malformed PGM header")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: malformed PGM header")
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: zero-area image ({width}x{height})")
    if maxval != 255:
        raise ImageFormatError(f"{path}: bit depth other than 8 (maxval {maxval})")
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise ImageFormatError(f"{path}: truncated pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("1", "I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageFormatError(f"{path}: bit depth other than 8 (mode {mode})")
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif mode == "LA":
                arr = np.asarray(im, dtype=np.uint8)[..., 0]
            else:
                arr = luma(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except ImageFormatError:
        raise
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.size == 0:
        raise ImageFormatError(f"{path}: zero-area image")
    return np.ascontiguousarray(arr)


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale image.

    Parameters
    ----------
    path : str or Path
        A binary PGM (``P5``) or PNG file.

    Returns
    -------
    ndarray of uint8, shape (height, width)

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ImageFormatError
        On a malformed header, a bit depth other than 8 or a zero-area image.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    data = path.read_bytes()
    if data[:2] == b"P5":
        return _read_pgm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise ImageFormatError(f"{path}: not a P5 PGM or PNG file")


def save_image(img, path) -> None:
    """Write a raster or binary mask; masks are stored as 0/255.

    The format follows the suffix: ``.png`` goes through Pillow, anything else
    is written as binary PGM.
    """
    arr = as_raster(img)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(arr, mode="L").save(path)
        return
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


@dataclass
class DatasetManifest:
    """Labelled image list, sorted by path. Label 1 is cancerous, 0 normal."""

    entries: list[tuple[Path, int]] = field(default_factory=list)

    def __post_init__(self):
        paths = [str(p) for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            dup = next(p for p, n in Counter(paths).items() if n > 1)
            raise ManifestError(f"duplicate path: {dup}")
        for p, label in self.entries:
            if label not in (0, 1):
                raise ManifestError(f"unknown label {label!r} for {p}")

    @property
    def class_counts(self) -> dict[int, int]:
        counts = Counter(label for _, label in self.entries)
        return {1: counts.get(1, 0), 0: counts.get(0, 0)}

    @property
    def paths(self) -> list[Path]:
        return [p for p, _ in self.entries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)

    def __len__(self):
        return len(self.entries)


def _parse_label(token: str, where: str) -> int:
    token = token.strip().lower()
    if token in ("1", "cancerous"):
        return 1
    if token in ("0", "normal"):
        return 0
    raise ManifestError(f"unknown label token {token!r} at {where}")


def load_manifest(root) -> DatasetManifest:
    """Build a manifest from a class-folder directory or a ``path,label`` CSV.

    A directory must contain ``cancerous/`` and/or ``normal/`` subfolders of
    ``.pgm``/``.png`` files. CSV paths are resolved relative to the CSV file.
    Entries are sorted lexicographically by path so fold assignment is
    reproducible.
    """
    root = Path(root)
    entries: list[tuple[Path, int]] = []
    if root.is_dir():
        for name, label in LABELS.items():
            sub = root / name
            if sub.is_dir():
                entries += [
                    (p, label) for p in sub.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
                ]
    elif root.is_file():
        with open(root, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["path", "label"]:
                raise ManifestError(f"{root}: CSV header must be 'path,label'")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise ManifestError(f"{root}:{lineno}: expected 2 columns, got {len(row)}")
                p = Path(row[0].strip())
                if not p.is_absolute():
                    p = root.parent / p
                entries.append((p, _parse_label(row[1], f"{root}:{lineno}")))
    else:
        raise ManifestError(f"no such dataset: {root}")
    if not entries:
        raise ManifestError("empty dataset")
    entries.sort(key=lambda e: str(e[0]))
    return DatasetManifest(entries)
