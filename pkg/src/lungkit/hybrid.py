"""CNN feature extractor + standardizer + classical head, and its LKMB form."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classic import Standardizer, classic_predict, fit_head, head_from_container, head_to_container, standardize_fit
from .errors import BundleFormatError
from .tinynet import ModelBundle, NetworkSpec, extract_features
from .tinynet.bundle import dumps_container, loads_container


@dataclass
class HybridModel:
    cnn: ModelBundle
    standardizer: Standardizer
    head: object
    head_kind: str

    def predict(self, images):
        """``(labels, scores)`` for a batch of network-ready images."""
        feats = self.standardizer.apply(extract_features(self.cnn, images))
        return classic_predict(self.head, feats)


def fit_hybrid(cnn: ModelBundle, images, labels, head: str = "svm", seed: int = 0, **params) -> HybridModel:
    feats = extract_features(cnn, images).astype(np.float64)
    std = standardize_fit(feats)
    model = fit_head(head, std.apply(feats), np.asarray(labels), seed=seed, **params)
    return HybridModel(cnn, std, model, head)


def save_hybrid(model: HybridModel, path) -> None:
    head_header, tensors = head_to_container(model.head)
    tensors.update({f"cnn/{k}": np.asarray(v, np.float32) for k, v in model.cnn.weights.items()})
    tensors["std/mean"] = np.asarray(model.standardizer.mean, np.float64)
    tensors["std/sd"] = np.asarray(model.standardizer.sd, np.float64)
    header = {
        "kind": "hybrid",
        "spec": model.cnn.spec.to_dict(),
        "meta": model.cnn.meta,
        "head": head_header,
        "head_kind": model.head_kind,
    }
    Path(path).write_bytes(dumps_container(header, tensors))


def load_hybrid(path) -> HybridModel:
    header, tensors = loads_container(Path(path).read_bytes())
    if header.get("kind") != "hybrid":
        raise BundleFormatError(f"{path} holds a {header.get('kind')!r} model, not a hybrid")
    spec = NetworkSpec.from_dict(header["spec"])
    weights = {k[4:]: v for k, v in tensors.items() if k.startswith("cnn/")}
    cnn = ModelBundle(spec, {k: weights[k] for k in spec.weight_shapes()}, header.get("meta", {}))
    std = Standardizer(tensors["std/mean"], tensors["std/sd"])
    return HybridModel(cnn, std, head_from_container(header["head"], tensors), header["head_kind"])
