"""LKMB model container.

Layout (all integers little-endian)::

    b"LKMB" | version u32 | header length u64 | UTF-8 JSON header | tensor blobs

The header holds the model description, training metadata and a tensor
index ``name -> {shape, offset, length, dtype}`` with offsets relative to the
start of the blob section. Network weights are float32 (``"<f4"``); classical
heads may store float64 arrays (``"<f8"``) so their decision values survive a
round trip unchanged.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BundleFormatError
from .network import NetworkSpec

MAGIC = b"LKMB"
VERSION = 1
DTYPES = ("<f4", "<f8")


@dataclass
class ModelBundle:
    spec: NetworkSpec
    weights: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def dumps_container(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        index[name] = {"shape": list(arr.shape), "offset": offset, "length": len(raw), "dtype": dtype}
        blobs.append(raw)
        offset += len(raw)
    head = dict(header)
    head["tensors"] = index
    text = json.dumps(head, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(text)) + text + b"".join(blobs)


def loads_container(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BundleFormatError("magic mismatch")
    if len(data) < 16:
        raise BundleFormatError("truncated payload")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise BundleFormatError(f"version unsupported: {version}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise BundleFormatError("truncated payload")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"corrupt header: {exc}") from exc
    blob = memoryview(data)[16 + hlen :]
    tensors = {}
    for name, entry in header.get("tensors", {}).items():
        dtype = entry.get("dtype", "<f4")
        if dtype not in DTYPES:
            raise BundleFormatError(f"tensor {name}: unsupported dtype {dtype}")
        shape = tuple(entry["shape"])
        itemsize = np.dtype(dtype).itemsize
        if int(np.prod(shape, dtype=np.int64)) * itemsize != entry["length"]:
            raise BundleFormatError(f"shape table inconsistent with blob length for tensor {name}")
        start, stop = entry["offset"], entry["offset"] + entry["length"]
        if stop > len(blob):
            raise BundleFormatError("truncated payload")
        tensors[name] = np.frombuffer(blob[start:stop], dtype=dtype).reshape(shape).copy()
    return header, tensors


def save_bundle(bundle: ModelBundle, path) -> None:
    header = {"kind": "network", "spec": bundle.spec.to_dict(), "meta": bundle.meta}
    Path(path).write_bytes(dumps_container(header, {k: np.asarray(v, np.float32) for k, v in bundle.weights.items()}))


def load_bundle(path) -> ModelBundle:
    header, tensors = loads_container(Path(path).read_bytes())
    if header.get("kind") != "network":
        raise BundleFormatError(f"{path} holds a {header.get('kind')!r} model, not a network")
    spec = NetworkSpec.from_dict(header["spec"])
    expected = spec.weight_shapes()
    if set(expected) != set(tensors):
        raise BundleFormatError("shape table does not match the network spec")
    for name, shape in expected.items():
        if tensors[name].shape != tuple(shape):
            raise BundleFormatError(f"tensor {name} has shape {tensors[name].shape}, spec needs {tuple(shape)}")
    return ModelBundle(spec, {k: tensors[k] for k in expected}, header.get("meta", {}))
