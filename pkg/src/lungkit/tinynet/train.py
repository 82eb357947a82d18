from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeError, TrainingError
from .bundle import ModelBundle
from .network import Network, NetworkSpec
from .optim import Adam

log = logging.getLogger(__name__)

MIN_IMPROVEMENT = 1e-6


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


def _as_inputs(spec: NetworkSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float32)
    if x.ndim == 3 and spec.input_shape[0] == 1:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(f"inputs of shape {x.shape} do not match network input {tuple(spec.input_shape)}")
    return x


def _as_targets(spec: NetworkSpec, targets, n: int) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float32)
    want = (n, 1, *spec.input_shape[1:]) if spec.task == "segmentation" else (n, 1)
    if y.size != int(np.prod(want)):
        raise ShapeError(f"targets of shape {y.shape} do not match expected {want}")
    return y.reshape(want)


def _mean_loss(net: Network, x, y, batch_size) -> float:
    total = 0.0
    for s in range(0, len(x), batch_size):
        p = net.forward(x[s : s + batch_size], "infer")
        yb = y[s : s + batch_size]
        pc = np.clip(p.astype(np.float64), 1e-7, 1 - 1e-7)
        total += float(-np.sum(yb * np.log(pc) + (1 - yb) * np.log(1 - pc)))
    return total / y.size


def train_model(spec: NetworkSpec, data, cfg: TrainConfig = TrainConfig(), callback=None):
    """Mini-batch Adam on binary cross-entropy with early stopping.

    The data are shuffled once with ``cfg.seed`` and the last
    ``int(val_fraction * N)`` samples become the validation set (when that is
    zero the training loss, evaluated in inference mode, is monitored instead).
    Training stops once the monitored loss has failed to improve by more than
    1e-6 for ``patience`` consecutive epochs (immediately when patience is 0)
    and the best epoch's weights are returned.

    Parameters
    ----------
    spec : NetworkSpec
    data : (inputs, targets)
        Inputs ``(N, C, H, W)``; targets are masks ``(N, 1, H, W)`` for
        segmentation or labels ``(N,)`` for classification.
    cfg : TrainConfig
    callback : callable, optional
        Called as ``callback(epoch, net, record)`` after every epoch; returning
        True stops training (the best weights so far are still returned).

    Returns
    -------
    (ModelBundle, list of dict)
        The bundle and the per-epoch history ``{epoch, train_loss, val_loss}``.
    """
    inputs, targets = data
    x = _as_inputs(spec, inputs)
    n = len(x)
    if n == 0:
        raise TrainingError("empty training data")
    y = _as_targets(spec, targets, n)

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_val = int(cfg.val_fraction * n)
    train_idx, val_idx = order[: n - n_val], order[n - n_val :]
    if len(train_idx) == 0:
        raise TrainingError("validation fraction leaves no training samples")
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = (x[val_idx], y[val_idx]) if n_val else (x_tr, y_tr)

    net = Network(spec, seed=cfg.seed, dtype=np.float32)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    best_loss, best_weights, best_epoch = np.inf, net.copy_weights(), 0
    history = []
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(x_tr))
        seen, running = 0, 0.0
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            loss, grads = net.loss_and_grads(x_tr[idx], y_tr[idx], rng)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch}, batch {s // cfg.batch_size}")
            opt.step(net.weights, grads)
            running += loss * len(idx)
            seen += len(idx)
        val_loss = _mean_loss(net, x_val, y_val, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became {val_loss} at epoch {epoch}")
        record = {"epoch": epoch, "train_loss": running / seen, "val_loss": val_loss}
        history.append(record)
        log.info("epoch %d train %.6f val %.6f", epoch, record["train_loss"], val_loss)
        if val_loss < best_loss - MIN_IMPROVEMENT:
            best_loss, best_weights, best_epoch = val_loss, net.copy_weights(), epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        if callback is not None and callback(epoch, net, record):
            break

    meta = {
        "seed": cfg.seed,
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "best_val_loss": float(best_loss),
        "train_config": asdict(cfg),
    }
    return ModelBundle(spec, best_weights, meta), history


def _network(bundle: ModelBundle) -> Network:
    return Network(bundle.spec, bundle.weights, dtype=np.float32)


def predict(bundle: ModelBundle, inputs, batch_size: int = 32) -> np.ndarray:
    """Inference-mode outputs: ``(N,)`` scores or ``(N, H, W)`` probability masks."""
    net = _network(bundle)
    x = _as_inputs(bundle.spec, inputs)
    out = [net.forward(x[s : s + batch_size], "infer") for s in range(0, len(x), batch_size)]
    p = np.concatenate(out) if out else np.zeros((0, 1), np.float32)
    return p[:, 0]


def extract_features(bundle: ModelBundle, inputs, batch_size: int = 32) -> np.ndarray:
    """Activations of the flatten layer, one row per input."""
    kinds = [layer.kind for layer in bundle.spec.layers]
    if "flatten" not in kinds:
        raise ShapeError("network has no flatten layer to extract features from")
    stop = kinds.index("flatten")
    net = _network(bundle)
    x = _as_inputs(bundle.spec, inputs)
    rows = [net.forward(x[s : s + batch_size], "infer", stop_at=stop) for s in range(0, len(x), batch_size)]
    return np.concatenate(rows)
