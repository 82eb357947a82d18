"""``lungkit`` command line.

Exit status: 0 on success, 1 on a domain error (bad data, files or config),
2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_from_dict, dump_config, parse_config
from .errors import LungkitError, ManifestError
from .harness import (
    dump_json,
    format_summary,
    head_params,
    lung_mask_config,
    network_spec,
    prepare_dataset,
    run_cv,
    train_config,
)
from .metrics import aggregate, dice, iou
from .morphoseg import label_components
from .preprocess import ClaheParams, ResizeSpec, clahe, resize
from .raster import IMAGE_SUFFIXES, load_image, load_manifest, save_image

log = logging.getLogger("lungkit")


# -- helpers --------------------------------------------------------------------------------


def _image_paths(src) -> list[Path]:
    """Images named by a class-folder dataset, a ``path,label`` CSV or a plain directory."""
    src = Path(src)
    if src.is_dir() and not any((src / c).is_dir() for c in ("cancerous", "normal")):
        paths = sorted(p for p in src.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise ManifestError(f"no .pgm/.png images in {src}")
        return paths
    return load_manifest(src).paths


def _stem_map(directory, masks: bool = False) -> dict[str, Path]:
    """Stem -> path. With ``masks``, ``x_mask`` pairs as ``x`` and ``x_masked`` images are skipped."""
    out: dict[str, Path] = {}
    for p in _image_paths(directory):
        stem = p.stem
        if masks:
            if stem.endswith("_masked"):
                continue
            stem = stem.removesuffix("_mask")
        if stem in out:
            raise ManifestError(f"two files share the stem {stem!r} in {directory}")
        out[stem] = p
    return out


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    overrides = {
        "dataset": "dataset.root",
        "masks": "dataset.masks",
        "out": "output.dir",
        "seed": "train.seed",
        "epochs": "train.epochs",
        "lr": "train.lr",
        "size": "preprocess.size",
        "folds": "cv.folds",
        "head": "model.head",
    }
    doc = cfg.to_dict()
    for attr, key in overrides.items():
        value = getattr(args, attr, None)
        if value is not None:
            sec, name = key.split(".")
            doc[sec][name] = value
    if getattr(args, "command", None) == "cv" and args.seed is not None:
        doc["cv"]["seed"] = args.seed
    return config_from_dict(doc)


def _require_dataset(cfg: RunConfig):
    if not cfg.dataset.root:
        raise LungkitError("no dataset given: set dataset.root in the config or pass --dataset")
    return load_manifest(cfg.dataset.root)


# -- subcommands ----------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    params = ClaheParams(args.clahe_clip, (args.clahe_grid, args.clahe_grid))
    spec = ResizeSpec(args.size, args.size, "bilinear")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = _image_paths(args.inp)
    for p in paths:
        save_image(resize(clahe(load_image(p), params), spec), out / f"{p.stem}.pgm")
    print(f"preprocessed {len(paths)} images into {out}")
    return 0


def cmd_genmask(args) -> int:
    cfg = config_from_dict(
        {
            "morphology": {
                "polarity": args.polarity,
                "r_dilate": args.r_dilate,
                "r_erode": args.r_erode,
                "r_close": args.r_close,
                "keep": args.keep,
            }
        }
    )
    mcfg = lung_mask_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .morphoseg import generate_lung_mask

    report = []
    for p in _image_paths(args.inp):
        img = load_image(p)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            mask, masked = generate_lung_mask(img, mcfg)
        save_image(mask, out / f"{p.stem}_mask.pgm")
        save_image(masked, out / f"{p.stem}_masked.pgm")
        report.append(
            {
                "name": p.stem,
                "components": label_components(mask, 8).n_components,
                "area_fraction": float(mask.mean()),
                "warnings": [str(w.message) for w in caught],
            }
        )
        for w in caught:
            log.warning("%s: %s", p.stem, w.message)
    dump_json(report, out / "genmask_report.json")
    print(f"wrote masks for {len(report)} images to {out}")
    return 0


def _train(args, task: str) -> int:
    cfg = _load_config(args)
    cfg.model.task = task
    manifest = _require_dataset(cfg)
    data = prepare_dataset(manifest, cfg)
    spec = network_spec(cfg, cfg.preprocess.size)
    from .tinynet import save_bundle, train_model

    targets = data.masks if task == "segmentation" else data.labels
    bundle, history = train_model(spec, (data.images, targets), train_config(cfg))
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out / "model.lkmb")
    dump_json(history, out / "history.json")
    print(f"best epoch {bundle.meta['best_epoch']} of {len(history)}; model written to {out / 'model.lkmb'}")
    return 0


def cmd_train_seg(args) -> int:
    return _train(args, "segmentation")


def cmd_train_clf(args) -> int:
    return _train(args, "classification")


def cmd_train_hybrid(args) -> int:
    from .hybrid import fit_hybrid, save_hybrid
    from .tinynet import load_bundle

    cnn = load_bundle(args.features_from)
    if cnn.spec.task != "classification":
        raise LungkitError(f"{args.features_from} is a {cnn.spec.task} network; a classifier CNN is required")
    cfg = _load_config(args)
    cfg.model.task = "hybrid"
    cfg.preprocess.size = int(cnn.spec.input_shape[-1])
    manifest = _require_dataset(cfg)
    data = prepare_dataset(manifest, cfg)
    model = fit_hybrid(cnn, data.images, data.labels, cfg.model.head, seed=cfg.train.seed, **head_params(cfg))
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    save_hybrid(model, out / "hybrid.lkmb")
    labels_hat, _ = model.predict(data.images)
    print(f"{cfg.model.head} head: training accuracy {float(np.mean(labels_hat == data.labels)):.5f}")
    print(f"model written to {out / 'hybrid.lkmb'}")
    return 0


def cmd_eval(args) -> int:
    pred, truth = _stem_map(args.pred, masks=True), _stem_map(args.truth, masks=True)
    for stem in sorted(pred.keys() ^ truth.keys()):
        side = "truth" if stem in pred else "prediction"
        raise LungkitError(f"unmatched stem {stem!r}: no {side} file")
    per_image = []
    for stem in sorted(pred):
        p, t = load_image(pred[stem]) > 127, load_image(truth[stem]) > 127
        if p.shape != t.shape:
            raise LungkitError(f"{stem}: prediction {p.shape} and truth {t.shape} differ in size")
        per_image.append({"name": stem, "dice": dice(p, t), "iou": iou(p, t)})
    summary = {}
    for key in ("dice", "iou"):
        mean, sd = aggregate([r[key] for r in per_image])
        summary[key] = {"mean": mean, "sd": sd}
    dump_json({"per_image": per_image, "summary": summary}, args.report)
    print(format_summary(summary))
    return 0


def cmd_cv(args) -> int:
    cfg = _load_config(args)
    manifest = _require_dataset(cfg)
    report = run_cv(cfg, manifest, args.out)
    print(format_summary(report.summary))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    _, failed = run_selftest(args.seed, out=sys.stdout)
    return 1 if failed else 0


def cmd_config(args) -> int:
    print(dump_config(_load_config(args)))
    return 0


# -- parser ---------------------------------------------------------------------------------


class _Formatter(argparse.HelpFormatter):
    """Appends ``(default: x)`` to every valued flag that has a non-None default."""

    def _get_help_string(self, action):
        text = action.help or ""
        shown = action.default not in (None, argparse.SUPPRESS) and not isinstance(action.default, bool)
        if shown and action.option_strings and "%(default)" not in text:
            text += " (default: %(default)s)"
        return text


_DEFAULTS = RunConfig().to_dict()


def _override(key: str) -> str:
    sec, name = key.split(".")
    return f"overrides {key} (config default: {_DEFAULTS[sec][name]})"


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    parser = argparse.ArgumentParser(prog="lungkit", description="Lung CT preprocessing, segmentation and classification.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"lungkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses and warnings")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("preprocess", help="CLAHE-enhance and resize images", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="dataset directory, CSV manifest or image directory")
    p.add_argument("--out", required=True, help="output directory for <stem>.pgm")
    p.add_argument("--clahe-clip", type=float, default=2.0, help="CLAHE clip limit")
    p.add_argument("--clahe-grid", type=int, default=8, help="CLAHE tiles per side (square grid)")
    p.add_argument("--size", type=int, default=128, help="output width and height in pixels")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("genmask", help="derive lung masks by thresholding and morphology", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="dataset directory, CSV manifest or image directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--polarity", choices=("dark", "bright"), default="dark", help="which side of the Otsu threshold is lung")
    p.add_argument("--r-dilate", type=int, default=5, help="dilation disk radius")
    p.add_argument("--r-erode", type=int, default=4, help="erosion disk radius")
    p.add_argument("--r-close", type=int, default=10, help="closing disk radius")
    p.add_argument("--keep", type=int, default=2, help="number of largest components kept")
    p.set_defaults(func=cmd_genmask)

    def training_flags(p):
        p.add_argument("--config", help="JSON run configuration (missing keys take defaults)")
        p.add_argument("--dataset", help=_override("dataset.root"))
        p.add_argument("--masks", help=_override("dataset.masks"))
        p.add_argument("--out", help=_override("output.dir"))
        p.add_argument("--seed", type=int, help=_override("train.seed"))
        p.add_argument("--epochs", type=int, help=_override("train.epochs"))
        p.add_argument("--lr", type=float, help=_override("train.lr"))
        p.add_argument("--size", type=int, help=_override("preprocess.size"))

    p = sub.add_parser("train-seg", help="train the U-Net segmenter on a whole dataset", formatter_class=fmt)
    training_flags(p)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("train-clf", help="train the CNN classifier on a whole dataset", formatter_class=fmt)
    training_flags(p)
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("train-hybrid", help="fit a classical head on CNN features", formatter_class=fmt)
    p.add_argument("--features-from", required=True, help="trained classifier bundle (.lkmb)")
    p.add_argument("--head", choices=("svm", "rf", "gb"), help=_override("model.head"))
    training_flags(p)
    p.set_defaults(func=cmd_train_hybrid)

    p = sub.add_parser("eval", help="score predicted masks against truth masks", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="directory of predicted masks (pixel > 127 is foreground)")
    p.add_argument("--truth", required=True, help="directory of truth masks, paired by file stem (a trailing _mask is ignored)")
    p.add_argument("--report", default="report.json", help="output JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation", formatter_class=fmt)
    p.add_argument("--config", help="JSON run configuration (missing keys take defaults)")
    p.add_argument("--dataset", help=_override("dataset.root"))
    p.add_argument("--masks", help=_override("dataset.masks"))
    p.add_argument("--folds", type=int, help=_override("cv.folds"))
    p.add_argument("--seed", type=int, help=_override("cv.seed") + "; also sets train.seed")
    p.add_argument("--epochs", type=int, help=_override("train.epochs"))
    p.add_argument("--out", required=True, help="output directory for fold<i>/ and summary.json")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("selftest", help="run the built-in oracle checks", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="seed for the random test data")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("config", help="print the effective configuration", formatter_class=fmt)
    p.add_argument("--config", help="JSON run configuration")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (LungkitError, FileNotFoundError, ValueError) as exc:
        print(f"lungkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
