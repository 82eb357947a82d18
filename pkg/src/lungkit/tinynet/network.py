"""Network specifications, the layer graph, and the two reference builders."""

from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from . import layers as L

KINDS = ("conv", "tconv", "maxpool", "dense", "relu", "sigmoid", "dropout", "batchnorm", "flatten", "concat_skip")
TASKS = ("segmentation", "classification")


@dataclass
class LayerSpec:
    kind: str
    name: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], d["name"], dict(d.get("params", {})))


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    task: str

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls([LayerSpec.from_dict(x) for x in d["layers"]], tuple(d["input_shape"]), d["task"])

    def index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape (without batch axis) of every layer; validates the graph."""
        return infer_shapes(self)

    def weight_shapes(self) -> "OrderedDict[str, tuple[int, ...]]":
        out: OrderedDict[str, tuple[int, ...]] = OrderedDict()
        shapes = self.shapes()
        prev = tuple(self.input_shape)
        for layer, shape in zip(self.layers, shapes):
            p = layer.params
            if layer.kind == "conv":
                k = p.get("kernel", 3)
                out[f"{layer.name}.w"] = (p["filters"], prev[0], k, k)
                out[f"{layer.name}.b"] = (p["filters"],)
            elif layer.kind == "tconv":
                out[f"{layer.name}.w"] = (prev[0], p["filters"], 2, 2)
                out[f"{layer.name}.b"] = (p["filters"],)
            elif layer.kind == "dense":
                out[f"{layer.name}.w"] = (prev[0], p["units"])
                out[f"{layer.name}.b"] = (p["units"],)
            elif layer.kind == "batchnorm":
                for suffix in ("gamma", "beta", "running_mean", "running_var"):
                    out[f"{layer.name}.{suffix}"] = (prev[0],)
            prev = shape
        return out

    def describe(self) -> list[str]:
        """Human-readable rows, one per block (a ReLU/sigmoid is folded into its layer)."""
        rows = []
        i = 0
        while i < len(self.layers):
            layer, p = self.layers[i], self.layers[i].params
            nxt = self.layers[i + 1].kind if i + 1 < len(self.layers) else None
            act = {"relu": "ReLU", "sigmoid": "Sigmoid"}.get(nxt)
            if layer.kind == "conv":
                k = p.get("kernel", 3)
                rows.append(f"Conv2D ({p['filters']} filters, {k}x{k}" + (f", {act})" if act else ")"))
            elif layer.kind == "dense":
                unit = "neuron" if p["units"] == 1 else "neurons"
                rows.append(f"Dense ({p['units']} {unit}" + (f", {act})" if act else ")"))
            elif layer.kind == "maxpool":
                rows.append("MaxPooling2D (2x2)")
            elif layer.kind == "dropout":
                rows.append(f"Dropout ({p['rate']})")
            elif layer.kind == "flatten":
                rows.append("Flatten")
            elif layer.kind == "tconv":
                rows.append(f"Conv2DTranspose ({p['filters']} filters, 2x2, stride 2)")
            elif layer.kind == "concat_skip":
                rows.append(f"Concatenate (skip from {p['source']})")
            elif layer.kind == "batchnorm":
                rows.append("BatchNormalization")
            elif layer.kind in ("relu", "sigmoid"):
                rows.append({"relu": "ReLU", "sigmoid": "Sigmoid"}[layer.kind])
            if act and layer.kind in ("conv", "dense"):
                i += 1
            i += 1
        return rows


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    if spec.task not in TASKS:
        raise ValueError(f"unknown task {spec.task!r}")
    shape: tuple[int, ...] = tuple(int(s) for s in spec.input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"input shape must be (C, H, W), got {spec.input_shape}")
    out = []
    names = set()
    for layer in spec.layers:
        p = layer.params
        if layer.kind not in KINDS:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if layer.name in names:
            raise ValueError(f"duplicate layer name {layer.name!r}")
        names.add(layer.name)
        spatial = len(shape) == 3
        if layer.kind in ("conv", "tconv", "maxpool", "flatten", "concat_skip") and not spatial:
            raise ShapeError(f"{layer.name}: {layer.kind} needs a (C, H, W) input, got {shape}")
        if layer.kind == "conv":
            k, s = p.get("kernel", 3), p.get("stride", 1)
            if k < 1 or s < 1:
                raise ValueError(f"{layer.name}: kernel and stride must be >= 1")
            pad = p.get("padding", "same")
            shape = (
                p["filters"],
                L.conv_output_size(shape[1], k, s, pad),
                L.conv_output_size(shape[2], k, s, pad),
            )
            if min(shape) < 1:
                raise ShapeError(f"{layer.name}: kernel larger than input")
        elif layer.kind == "tconv":
            shape = (p["filters"], 2 * shape[1], 2 * shape[2])
        elif layer.kind == "maxpool":
            shape = (shape[0], (shape[1] + 1) // 2, (shape[2] + 1) // 2)
        elif layer.kind == "dense":
            if spatial:
                raise ShapeError(f"{layer.name}: dense needs a flattened input")
            shape = (p["units"],)
        elif layer.kind == "flatten":
            shape = (shape[0] * shape[1] * shape[2],)
        elif layer.kind == "dropout":
            if not 0 <= p["rate"] < 1:
                raise ValueError(f"{layer.name}: dropout rate must be in [0, 1)")
        elif layer.kind == "concat_skip":
            src = p["source"]
            idx = next((i for i, x in enumerate(spec.layers[: len(out)]) if x.name == src), None)
            if idx is None:
                raise ValueError(f"{layer.name}: skip source {src!r} is not an earlier layer")
            other = out[idx]
            if len(other) != 3 or other[1:] != shape[1:]:
                raise ShapeError(f"{layer.name}: skip source {src!r} has shape {other}, need spatial {shape[1:]}")
            shape = (shape[0] + other[0], shape[1], shape[2])
        out.append(shape)

    kinds = [x.kind for x in spec.layers]
    if spec.task == "segmentation":
        ok = (
            len(kinds) >= 2
            and kinds[-2:] == ["conv", "sigmoid"]
            and spec.layers[-2].params.get("kernel", 3) == 1
            and out[-1] == (1,) + tuple(spec.input_shape[1:])
        )
        if not ok:
            raise ShapeError("segmentation nets must end in a 1x1 conv + sigmoid at input resolution")
    else:
        if not (len(kinds) >= 2 and kinds[-2:] == ["dense", "sigmoid"] and out[-1] == (1,)):
            raise ShapeError("classification nets must end in dense(1) + sigmoid")
    return out


def build_mini_unet(depth: int = 3, base_channels: int = 16, input_shape=(1, 64, 64), batchnorm: bool = False):
    """Encoder/decoder with one skip connection per encoder resolution.

    Each encoder block is two 3x3 conv+ReLU followed by 2x2 max pooling, with
    channels doubling from ``base_channels``. The decoder upsamples with 2x2
    stride-2 transposed convolutions, concatenates the matching encoder output
    and applies two 3x3 conv+ReLU; a 1x1 conv + sigmoid produces the mask.
    """
    c, h, w = input_shape
    if depth < 1 or h % (2**depth) or w % (2**depth):
        raise ShapeError(f"input {h}x{w} is not divisible by 2**{depth}")
    layers: list[LayerSpec] = []

    def conv_block(prefix, filters):
        for k in (1, 2):
            layers.append(LayerSpec("conv", f"{prefix}_conv{k}", {"filters": filters, "kernel": 3, "padding": "same"}))
            if batchnorm:
                layers.append(LayerSpec("batchnorm", f"{prefix}_bn{k}", {"momentum": 0.9, "eps": 1e-5}))
            layers.append(LayerSpec("relu", f"{prefix}_relu{k}"))

    for i in range(depth):
        conv_block(f"enc{i}", base_channels * 2**i)
        layers.append(LayerSpec("maxpool", f"enc{i}_pool"))
    conv_block("bottleneck", base_channels * 2**depth)
    for i in reversed(range(depth)):
        layers.append(LayerSpec("tconv", f"dec{i}_up", {"filters": base_channels * 2**i}))
        layers.append(LayerSpec("concat_skip", f"dec{i}_cat", {"source": f"enc{i}_relu2"}))
        conv_block(f"dec{i}", base_channels * 2**i)
    layers.append(LayerSpec("conv", "head", {"filters": 1, "kernel": 1, "padding": "same"}))
    layers.append(LayerSpec("sigmoid", "head_sigmoid"))
    spec = NetworkSpec(layers, (c, h, w), "segmentation")
    infer_shapes(spec)
    return spec


def build_mini_cnn(input_shape=(1, 32, 32), widths=(16, 32, 64, 128), dense: int = 64, batchnorm: bool = False):
    """Conv classifier: ``[conv3x3-ReLU, maxpool 2x2, dropout 0.3]`` per width,
    then flatten, dense-ReLU, dropout 0.5 and a dense(1)-sigmoid output."""
    c, h, w = input_shape
    n = len(widths)
    if n < 1 or h % (2**n) or w % (2**n):
        raise ShapeError(f"input {h}x{w} is not divisible by 2**{n}")
    layers: list[LayerSpec] = []
    for i, width in enumerate(widths):
        layers.append(LayerSpec("conv", f"conv{i}", {"filters": int(width), "kernel": 3, "padding": "same"}))
        if batchnorm:
            layers.append(LayerSpec("batchnorm", f"bn{i}", {"momentum": 0.9, "eps": 1e-5}))
        layers += [
            LayerSpec("relu", f"relu{i}"),
            LayerSpec("maxpool", f"pool{i}"),
            LayerSpec("dropout", f"drop{i}", {"rate": 0.3}),
        ]
    layers += [
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "fc", {"units": int(dense)}),
        LayerSpec("relu", "fc_relu"),
        LayerSpec("dropout", "fc_drop", {"rate": 0.5}),
        LayerSpec("dense", "out", {"units": 1}),
        LayerSpec("sigmoid", "out_sigmoid"),
    ]
    spec = NetworkSpec(layers, (c, h, w), "classification")
    infer_shapes(spec)
    return spec


def init_weights(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, np.ndarray]":
    """Glorot-uniform kernels, zero biases, unit BN scale and running variance."""
    rng = np.random.default_rng(seed)
    weights: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in spec.weight_shapes().items():
        suffix = name.rsplit(".", 1)[1]
        if suffix == "w":
            if len(shape) == 4:
                rf = shape[2] * shape[3]
                fan_in, fan_out = shape[1] * rf, shape[0] * rf
                if name.split(".")[0] in _tconv_names(spec):
                    fan_in, fan_out = fan_out, fan_in
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif suffix in ("gamma", "running_var"):
            weights[name] = np.ones(shape, dtype=dtype)
        else:
            weights[name] = np.zeros(shape, dtype=dtype)
    return weights


def _tconv_names(spec):
    return {x.name for x in spec.layers if x.kind == "tconv"}


BUFFERS = ("running_mean", "running_var")


class Network:
    """Executable form of a :class:`NetworkSpec` with its weights.

    ``forward`` caches what ``backward`` needs; gradients come back as a dict
    keyed like the weights (BN running statistics are buffers, not trained).
    """

    def __init__(self, spec: NetworkSpec, weights=None, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.shapes = infer_shapes(spec)
        self.dtype = np.dtype(dtype)
        expected = spec.weight_shapes()
        if weights is None:
            weights = init_weights(spec, seed, self.dtype)
        missing = set(expected) - set(weights)
        extra = set(weights) - set(expected)
        if missing or extra:
            raise ShapeError(f"weight table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        self.weights: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, shape in expected.items():
            arr = np.array(weights[name], dtype=self.dtype)
            if arr.shape != tuple(shape):
                raise ShapeError(f"weight {name} has shape {arr.shape}, expected {tuple(shape)}")
            self.weights[name] = arr
        self._cache: list = []

    @property
    def params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.weights.items() if not k.endswith(BUFFERS))

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None, stop_at: int | None = None):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(f"input shape {x.shape[1:]} does not match network input {tuple(self.spec.input_shape)}")
        L.check_finite(x, "network input")
        outputs = []
        cache = []
        last = len(self.spec.layers) - 1 if stop_at is None else stop_at
        for i, layer in enumerate(self.spec.layers[: last + 1]):
            p, w = layer.params, self.weights
            c = None
            if layer.kind == "conv":
                y = L.conv2d_apply(x, w[f"{layer.name}.w"], w[f"{layer.name}.b"], p.get("stride", 1), p.get("padding", "same"))
            elif layer.kind == "tconv":
                y = L.tconv2d_apply(x, w[f"{layer.name}.w"], w[f"{layer.name}.b"])
            elif layer.kind == "maxpool":
                y, c = L.maxpool2d_apply(x)
            elif layer.kind == "dense":
                y = L.dense_apply(x, w[f"{layer.name}.w"], w[f"{layer.name}.b"])
            elif layer.kind in ("relu", "sigmoid"):
                y = L.activation_apply(x, layer.kind)
            elif layer.kind == "dropout":
                y, c = L.dropout_apply(x, p["rate"], mode, rng)
            elif layer.kind == "batchnorm":
                y, c = L.batchnorm_apply(
                    x,
                    w[f"{layer.name}.gamma"],
                    w[f"{layer.name}.beta"],
                    mode,
                    w[f"{layer.name}.running_mean"],
                    w[f"{layer.name}.running_var"],
                    p.get("momentum", 0.9),
                    p.get("eps", 1e-5),
                )
            elif layer.kind == "flatten":
                y = x.reshape(x.shape[0], -1)
            elif layer.kind == "concat_skip":
                src = self.spec.index(p["source"])
                c = x.shape[1]
                y = np.concatenate([x, outputs[src]], axis=1)
            cache.append((x, y, c))
            outputs.append(y)
            x = y
        self._cache = cache
        return x

    def backward(self, dy, start: int | None = None) -> dict[str, np.ndarray]:
        """Backpropagate ``dy``, the gradient w.r.t. the output of layer ``start``
        (default: the last layer). Returns gradients for the trainable weights."""
        grads: dict[str, np.ndarray] = {}
        skip_grads: dict[int, np.ndarray] = {}
        start = len(self._cache) - 1 if start is None else start
        g = np.asarray(dy, dtype=self.dtype)
        for i in range(start, -1, -1):
            layer = self.spec.layers[i]
            x, y, c = self._cache[i]
            if i in skip_grads:
                g = g + skip_grads.pop(i)
            w = self.weights
            n = layer.name
            if layer.kind == "conv":
                p = layer.params
                g, grads[f"{n}.w"], grads[f"{n}.b"] = L.conv2d_grad(x, w[f"{n}.w"], g, p.get("stride", 1), p.get("padding", "same"))
            elif layer.kind == "tconv":
                g, grads[f"{n}.w"], grads[f"{n}.b"] = L.tconv2d_grad(x, w[f"{n}.w"], g)
            elif layer.kind == "maxpool":
                g = L.maxpool2d_grad(g, c, x.shape)
            elif layer.kind == "dense":
                g, grads[f"{n}.w"], grads[f"{n}.b"] = L.dense_grad(x, w[f"{n}.w"], g)
            elif layer.kind in ("relu", "sigmoid"):
                g = L.activation_grad(x, y, g, layer.kind)
            elif layer.kind == "dropout":
                g = L.dropout_grad(g, c, layer.params["rate"])
            elif layer.kind == "batchnorm":
                g, grads[f"{n}.gamma"], grads[f"{n}.beta"] = L.batchnorm_grad(g, w[f"{n}.gamma"], c)
            elif layer.kind == "flatten":
                g = g.reshape(x.shape)
            elif layer.kind == "concat_skip":
                src = self.spec.index(layer.params["source"])
                skip = g[:, c:]
                skip_grads[src] = skip_grads[src] + skip if src in skip_grads else skip
                g = g[:, :c]
        return {k: grads[k] for k in self.params if k in grads}

    def loss_and_grads(self, x, y, rng=None, mode: str = "train"):
        """Forward in ``mode``, BCE loss against ``y`` and gradients.

        The final sigmoid and the loss are differentiated together, so the
        gradient entering the last pre-sigmoid layer is ``(p - y) / count``.
        """
        p = self.forward(x, mode, rng)
        y = np.asarray(y, dtype=self.dtype).reshape(p.shape)
        loss = L.bce_loss(p, y)
        grads = self.backward(L.bce_logit_grad(p, y), start=len(self.spec.layers) - 2)
        return loss, grads

    def copy_weights(self) -> "OrderedDict[str, np.ndarray]":
        return copy.deepcopy(self.weights)
