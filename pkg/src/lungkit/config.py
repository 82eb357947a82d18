"""JSON run configuration with defaults and validation.

Every key has a default; an empty JSON object is a complete configuration.
Unknown keys, wrong types and out-of-range values raise :class:`ConfigError`
naming the offending key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class DatasetSection:
    root: Optional[str] = None  # class-folder directory or path,label CSV
    masks: Optional[str] = None  # directory of <stem>_mask.pgm truth masks; None derives them morphologically


@dataclass
class PreprocessSection:
    clahe_clip: float = 2.0
    clahe_grid: int = 8
    size: int = 128


@dataclass
class MorphologySection:
    polarity: str = "dark"
    r_dilate: int = 5
    r_erode: int = 4
    r_close: int = 10
    keep: int = 2


@dataclass
class ModelSection:
    task: str = "segmentation"  # segmentation | classification | hybrid
    unet_depth: int = 3
    unet_base: int = 16
    cnn_widths: list = field(default_factory=lambda: [32, 64, 128, 256])
    cnn_dense: int = 256
    batchnorm: bool = False
    clf_input: str = "masked"  # masked | raw
    head: str = "svm"  # svm | rf | gb
    svm_c: float = 1.0
    svm_gamma: str = "scale"
    svm_tol: float = 1e-3
    svm_max_passes: int = 20
    rf_estimators: int = 100
    rf_max_features: str = "sqrt"
    gb_stages: int = 100
    gb_lr: float = 0.1
    gb_max_depth: int = 3


@dataclass
class TrainSection:
    lr: float = 1e-3
    seg_batch_size: int = 2
    clf_batch_size: int = 16
    epochs: int = 50
    seg_patience: int = 15
    clf_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 42


@dataclass
class CvSection:
    folds: int = 5
    seed: int = 42


@dataclass
class OutputSection:
    dir: str = "runs"


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    morphology: MorphologySection = field(default_factory=MorphologySection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    cv: CvSection = field(default_factory=CvSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}

_CHOICES = {
    "morphology.polarity": ("dark", "bright"),
    "model.task": ("segmentation", "classification", "hybrid"),
    "model.clf_input": ("masked", "raw"),
    "model.head": ("svm", "rf", "gb"),
    "model.rf_max_features": ("sqrt", "auto", "all"),
}

_MINIMUM = {
    "preprocess.clahe_clip": 1.0,
    "preprocess.clahe_grid": 1,
    "preprocess.size": 1,
    "morphology.r_dilate": 0,
    "morphology.r_erode": 0,
    "morphology.r_close": 0,
    "morphology.keep": 1,
    "model.unet_depth": 1,
    "model.unet_base": 1,
    "model.cnn_dense": 1,
    "model.svm_max_passes": 1,
    "model.rf_estimators": 1,
    "model.gb_stages": 1,
    "model.gb_max_depth": 1,
    "train.seg_batch_size": 1,
    "train.clf_batch_size": 1,
    "train.epochs": 1,
    "train.seg_patience": 0,
    "train.clf_patience": 0,
    "train.val_fraction": 0.0,
    "cv.folds": 2,
}

_POSITIVE = ("model.svm_c", "model.svm_tol", "model.gb_lr", "train.lr")


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value)
        ok = ok and len(value) > 0
    else:  # str or Optional[str]
        ok = value is None and default is None or isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__ if default is not None else 'string'}, got {value!r}")
    return value


def _validate(cfg: RunConfig) -> None:
    for key, choices in _CHOICES.items():
        sec, name = key.split(".")
        if getattr(getattr(cfg, sec), name) not in choices:
            raise ConfigError(f"{name}: must be one of {', '.join(choices)} ({key})")
    for key, lo in _MINIMUM.items():
        sec, name = key.split(".")
        if getattr(getattr(cfg, sec), name) < lo:
            raise ConfigError(f"{name}: must be >= {lo} ({key})")
    for key in _POSITIVE:
        sec, name = key.split(".")
        if not getattr(getattr(cfg, sec), name) > 0:
            raise ConfigError(f"{name}: must be > 0 ({key})")
    if cfg.train.val_fraction >= 1:
        raise ConfigError("val_fraction: must be < 1 (train.val_fraction)")
    gamma = cfg.model.svm_gamma
    if gamma != "scale":
        try:
            if float(gamma) <= 0:
                raise ValueError
        except ValueError:
            raise ConfigError("svm_gamma: must be 'scale' or a positive number (model.svm_gamma)") from None


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = RunConfig()
    for sec_name, sec_doc in doc.items():
        if sec_name not in SECTIONS:
            raise ConfigError(f"unknown key: {sec_name}")
        if not isinstance(sec_doc, dict):
            raise ConfigError(f"{sec_name}: expected an object")
        section = getattr(cfg, sec_name)
        known = {f.name for f in fields(section)}
        for key, value in sec_doc.items():
            if key not in known:
                raise ConfigError(f"unknown key: {sec_name}.{key}")
            setattr(section, key, _check_type(f"{sec_name}.{key}", value, getattr(section, key)))
    _validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    """Read a JSON config file; missing keys take their defaults."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
