"""Stratified k-fold cross-validation and report aggregation."""

from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import LungkitError
from .hybrid import fit_hybrid, save_hybrid
from .metrics import aggregate, binary_scores, dice, iou, segmentation_scores
from .morphoseg import LungMaskConfig, apply_mask, generate_lung_mask
from .preprocess import ClaheParams, ResizeSpec, preprocess_image, resize
from .raster import DatasetManifest, load_image
from .tinynet import TrainConfig, build_mini_cnn, build_mini_unet, predict, save_bundle, train_model

log = logging.getLogger(__name__)


@dataclass
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    def validation_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def training_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(labels, k: int = 5, seed: int = 42) -> FoldAssignment:
    """Stratified fold assignment.

    Each class (0 first, then 1) is shuffled with a generator seeded by
    ``seed`` and dealt round-robin to the folds. The dealer position carries
    over from one class to the next, so fold sizes never differ by more than
    one overall or per class.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    if len(labels) == 0 or counts.min() < k:
        raise ValueError(f"k={k} is larger than the minority class size {int(counts.min()) if len(counts) else 0}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        assignment[idx] = (pos + np.arange(len(idx))) % k
        pos = (pos + len(idx)) % k
    return FoldAssignment(k, assignment, seed)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def worker_count() -> int:
    env = os.environ.get("LUNGKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise LungkitError(f"LUNGKIT_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def map_ordered(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# -- data -----------------------------------------------------------------------------------


@dataclass
class PreparedData:
    names: list[str]
    labels: np.ndarray
    images: np.ndarray  # (N, 1, S, S) float32 network inputs
    masks: np.ndarray  # (N, S, S) bool truth masks
    warnings: dict[str, list[str]] = field(default_factory=dict)


def lung_mask_config(cfg: RunConfig) -> LungMaskConfig:
    m = cfg.morphology
    return LungMaskConfig(m.polarity, m.r_dilate, m.r_erode, m.r_close, m.keep)


def _truth_mask(path: Path, raw: np.ndarray, cfg: RunConfig):
    if cfg.dataset.masks:
        mdir = Path(cfg.dataset.masks)
        for cand in (mdir / f"{path.stem}_mask.pgm", mdir / f"{path.stem}_mask.png", mdir / f"{path.stem}.pgm"):
            if cand.is_file():
                return load_image(cand) > 127, []
        raise LungkitError(f"no truth mask for {path.stem} in {mdir}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mask, _ = generate_lung_mask(raw, lung_mask_config(cfg))
    return mask, [str(w.message) for w in caught]


def prepare_dataset(manifest: DatasetManifest, cfg: RunConfig) -> PreparedData:
    """Load, mask and preprocess every manifest entry for the configured task.

    Segmentation inputs are the enhanced full images; classification inputs
    are the lung-masked images unless ``model.clf_input`` is ``raw``.
    """
    p = cfg.preprocess
    params = ClaheParams(p.clahe_clip, (p.clahe_grid, p.clahe_grid))
    size = p.size

    def one(entry):
        path, _ = entry
        raw = load_image(path)
        mask, warns = _truth_mask(path, raw, cfg)
        source = raw
        if cfg.model.task != "segmentation" and cfg.model.clf_input == "masked":
            source = apply_mask(raw, mask)
        x = preprocess_image(source, params, size).astype(np.float32)
        m = resize(mask, ResizeSpec(size, size, "nearest"))
        return x, m, warns

    results = map_ordered(one, manifest.entries)
    names = [path.stem for path, _ in manifest.entries]
    return PreparedData(
        names,
        manifest.labels,
        np.stack([r[0] for r in results])[:, None],
        np.stack([r[1] for r in results]),
        {n: r[2] for n, r in zip(names, results) if r[2]},
    )


# -- model construction ---------------------------------------------------------------------


def network_spec(cfg: RunConfig, size: int):
    m = cfg.model
    if m.task == "segmentation":
        return build_mini_unet(m.unet_depth, m.unet_base, (1, size, size), batchnorm=m.batchnorm)
    return build_mini_cnn((1, size, size), tuple(m.cnn_widths), m.cnn_dense, batchnorm=m.batchnorm)


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    t = cfg.train
    seg = cfg.model.task == "segmentation"
    return TrainConfig(
        lr=t.lr,
        batch_size=t.seg_batch_size if seg else t.clf_batch_size,
        max_epochs=t.epochs,
        patience=t.seg_patience if seg else t.clf_patience,
        val_fraction=t.val_fraction,
        seed=t.seed if seed is None else seed,
    )


def head_params(cfg: RunConfig) -> dict:
    m = cfg.model
    if m.head == "svm":
        gamma = "scale" if m.svm_gamma == "scale" else float(m.svm_gamma)
        return {"C": m.svm_c, "gamma": gamma, "tol": m.svm_tol, "max_passes": m.svm_max_passes}
    if m.head == "rf":
        return {"n_estimators": m.rf_estimators, "max_features": None if m.rf_max_features == "all" else "sqrt"}
    return {"n_stages": m.gb_stages, "lr": m.gb_lr, "max_depth": m.gb_max_depth}


# -- cross-validation -----------------------------------------------------------------------


def aggregate_report(per_fold: list[dict]) -> dict[str, dict[str, float]]:
    """Per-metric mean and sample SD across folds."""
    if not per_fold:
        raise ValueError("no folds to aggregate")
    keys = set(per_fold[0])
    for i, fold in enumerate(per_fold):
        if set(fold) != keys:
            raise ValueError(f"fold {i} reports metrics {sorted(fold)}, expected {sorted(keys)}")
    out = {}
    for key in sorted(keys):
        mean, sd = aggregate([fold[key] for fold in per_fold])
        out[key] = {"mean": mean, "sd": sd}
    return out


def format_summary(summary: dict[str, dict[str, float]]) -> str:
    width = max(len(k) for k in summary)
    return "\n".join(f"{k:<{width}}  {v['mean']:.5f} ± {v['sd']:.5f}" for k, v in summary.items())


@dataclass
class EvalReport:
    task: str
    k: int
    seed: int
    per_fold: list[dict]
    summary: dict[str, dict[str, float]]
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "folds": self.k,
            "seed": self.seed,
            "per_fold": self.per_fold,
            "summary": self.summary,
            "per_image": self.per_image,
        }


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _run_fold(fold: int, data: PreparedData, folds: FoldAssignment, cfg: RunConfig, out_dir: Path | None):
    task = cfg.model.task
    tr, te = folds.training_indices(fold), folds.validation_indices(fold)
    seed = fold_seed(folds.seed, fold)
    spec = network_spec(cfg, data.images.shape[-1])
    tcfg = train_config(cfg, seed)
    per_image = []
    if task == "segmentation":
        bundle, history = train_model(spec, (data.images[tr], data.masks[tr]), tcfg)
        prob = predict(bundle, data.images[te])
        metrics = segmentation_scores(prob, data.masks[te])
        metrics["dice"] = float(np.mean([dice(p > 0.5, t) for p, t in zip(prob, data.masks[te])]))
        metrics["iou"] = float(np.mean([iou(p > 0.5, t) for p, t in zip(prob, data.masks[te])]))
        for i, p in zip(te, prob):
            per_image.append(
                {"name": data.names[i], "fold": fold, "dice": dice(p > 0.5, data.masks[i]), "iou": iou(p > 0.5, data.masks[i])}
            )
        model_obj = bundle
    else:
        bundle, history = train_model(spec, (data.images[tr], data.labels[tr]), tcfg)
        if task == "classification":
            scores = predict(bundle, data.images[te])
            metrics = binary_scores(scores, data.labels[te])
            model_obj = bundle
        else:
            model_obj = fit_hybrid(bundle, data.images[tr], data.labels[tr], cfg.model.head, seed=seed, **head_params(cfg))
            labels_hat, scores = model_obj.predict(data.images[te])
            metrics = binary_scores(scores, data.labels[te], predicted=labels_hat)
        for i, s in zip(te, scores):
            per_image.append({"name": data.names[i], "fold": fold, "label": int(data.labels[i]), "score": float(s)})

    if out_dir is not None:
        fdir = out_dir / f"fold{fold}"
        fdir.mkdir(parents=True, exist_ok=True)
        if task == "hybrid":
            save_hybrid(model_obj, fdir / "model.lkmb")
        else:
            save_bundle(model_obj, fdir / "model.lkmb")
        dump_json(
            {"fold": fold, "n_train": len(tr), "n_test": len(te), "metrics": metrics, "history": history, "per_image": per_image},
            fdir / "metrics.json",
        )
    log.info("fold %d: %s", fold, metrics)
    return metrics, per_image


def run_cv(cfg: RunConfig, manifest: DatasetManifest, out_dir=None, data: PreparedData | None = None) -> EvalReport:
    """k-fold cross-validation of the configured task.

    Each fold trains on the other k-1 folds (early stopping uses a slice of
    that training portion), scores the held-out fold, and, with ``out_dir``,
    writes ``fold<i>/model.lkmb`` and ``fold<i>/metrics.json``. The summary
    (``summary.json``) holds per-fold metrics, their mean and sample SD, and
    per-image values. Folds may run on a thread pool (``LUNGKIT_THREADS``);
    every fold seeds itself from ``(cv.seed, fold)``, so results do not
    depend on the worker count.
    """
    if data is None:
        data = prepare_dataset(manifest, cfg)
    folds = make_folds(data.labels, cfg.cv.folds, cfg.cv.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def run(i):
        try:
            return _run_fold(i, data, folds, cfg, out_dir)
        except Exception as exc:
            raise LungkitError(f"fold {i} failed: {exc}") from exc

    results = map_ordered(run, range(folds.k))
    per_fold = [r[0] for r in results]
    per_image = sorted((rec for r in results for rec in r[1]), key=lambda rec: rec["name"])
    report = EvalReport(cfg.model.task, folds.k, folds.seed, per_fold, aggregate_report(per_fold), per_image)
    if out_dir is not None:
        dump_json(report.to_dict(), out_dir / "summary.json")
    return report
