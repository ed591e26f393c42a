"""``ganaug`` command line: train-gan, generate, ssim, train-clf, evaluate.

Exit codes: 0 success, 2 usage/config/checkpoint problems, 3 data problems,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .classifier import predict_proba, prepare_images, train_classifier
from .config import RunConfig, describe_keys
from .dataio import (
    class_dirs,
    encode_image,
    load_checkpoint,
    load_dataset,
    normalize,
    resize_bilinear,
    save_checkpoint,
)
from .dataio.dataset import DatasetManifest
from .dcgan import sample_images, train_dcgan
from .errors import (
    CheckpointError,
    DataError,
    DimensionMismatch,
    InvalidConfig,
    NonFiniteGradient,
    NonFiniteLoss,
)
from .metrics import evaluate_predictions, ssim_report, write_eval_reports
from .tensor import Rng

log = logging.getLogger("ganaug")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RESOLVED_CONFIG = "resolved_config.txt"


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def _thread_limit():
    """Honor GANAUG_THREADS (0 = serial reference mode) for BLAS pools."""
    raw = os.environ.get("GANAUG_THREADS")
    if raw is None:
        yield
        return
    try:
        n = max(1, int(raw))
    except ValueError:
        raise CommandError(f"GANAUG_THREADS must be an integer, got {raw!r}", EXIT_USAGE) from None
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _resolve_config(args, sections) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg.load(args.config)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    seed = getattr(args, "seed", None)
    if seed is not None:
        for section in sections:
            if f"{section}.seed" in cfg.values:
                cfg.set(f"{section}.seed", seed)
    return cfg


def _load_images(root, classes, size: int | None):
    records, manifest = load_dataset(root, classes)
    pix = [r.pixels if size is None or r.pixels.shape[:2] == (size, size)
           else resize_bilinear(r.pixels, size, size) for r in records]
    shapes = {p.shape for p in pix}
    if len(shapes) != 1:
        raise DimensionMismatch(f"images in {root} have mixed sizes {sorted(shapes)}")
    return np.stack(pix), np.array(manifest.labels, dtype=np.int64), manifest


# commands ----------------------------------------------------------------------

def cmd_train_gan(args) -> int:
    cfg = _resolve_config(args, ["gan"])
    gcfg = cfg.gan()
    data_root = Path(args.data)
    if not (data_root / args.class_name).is_dir():
        raise CommandError(f"class directory {data_root / args.class_name} not found", EXIT_DATA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / RESOLVED_CONFIG, ["gan"])
    pixels, _, manifest = _load_images(data_root, [args.class_name], gcfg.image_size)
    if gcfg.channels != 3:
        raise InvalidConfig("image files are RGB; gan.channels must be 3")
    (out / "manifest.json").write_text(manifest.to_json())
    try:
        _, _, history = train_dcgan(normalize(pixels, "gan"), gcfg, checkpoint_dir=out)
    except NonFiniteLoss as e:
        (out / "nonfinite.txt").write_text(f"{e}\n{e.record}\n")
        raise
    history.to_csv(out / "loss_history.csv")
    print(f"trained {args.class_name}: {len(history)} iterations, checkpoints in {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.n < 0:
        raise InvalidConfig("--n must be >= 0")
    try:
        G = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError, ValueError, KeyError) as e:
        raise CommandError(f"cannot load generator {args.checkpoint}: {e}", EXIT_USAGE) from None
    if G.name != "generator":
        raise CommandError(f"{args.checkpoint} holds a {G.name!r}, not a generator", EXIT_USAGE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".png" if args.png else ".ppm"
    images = sample_images(G, args.n, Rng(args.seed))
    for i, im in enumerate(images):
        encode_image(im, out / f"gen_{args.seed}_{i:05d}{suffix}")
    print(f"wrote {len(images)} images to {out}")
    return EXIT_OK


def cmd_ssim(args) -> int:
    cfg = _resolve_config(args, ["ssim"])
    scfg = cfg.ssim()
    classes = class_dirs(args.generated)
    if not classes:
        raise CommandError(f"{args.generated} has no class directories", EXIT_DATA)
    gen_records, _ = load_dataset(args.generated, classes)
    real_records, _ = load_dataset(args.real, classes)
    generated = {c: [] for c in classes}
    for r in gen_records:
        generated[classes[r.class_label]].append(r.pixels)
    real = {c: [] for c in classes}
    for r in real_records:
        target = generated[classes[r.class_label]][0].shape[:2]
        pix = r.pixels if r.pixels.shape[:2] == target else resize_bilinear(r.pixels, *target)
        real[classes[r.class_label]].append(pix)
    report = ssim_report(generated, real, scfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    cfg.write(out.parent / f"{out.stem}_{RESOLVED_CONFIG}", ["ssim"])
    for row in report.rows:
        print(f"{row.class_name}: max={row.max:.3f} mean={row.mean:.3f} min={row.min:.3f}")
    return EXIT_OK


def cmd_train_clf(args) -> int:
    cfg = _resolve_config(args, ["clf"])
    classes = class_dirs(args.data)
    if not classes:
        raise CommandError(f"{args.data} has no class directories", EXIT_DATA)
    cfg.set("clf.num_classes", len(classes))
    ccfg = cfg.clf()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / RESOLVED_CONFIG, ["clf"])
    pixels, labels, manifest = _load_images(args.data, classes, ccfg.input_size)
    result = train_classifier(prepare_images(pixels, ccfg.input_size), labels, ccfg)
    manifest = DatasetManifest(manifest.class_names, manifest.paths, manifest.labels,
                               result.splits, ccfg.seed, manifest.skipped)
    (out / "manifest.json").write_text(manifest.to_json())
    for net in (result.model, result.best_model):
        net.meta["class_names"] = classes
    save_checkpoint(result.model, out / "model.gacp")
    save_checkpoint(result.best_model, out / "model_best.gacp")
    result.curves.to_csv(out / "training_curves.csv")
    last = result.curves.epochs[-1] if result.curves.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}: train_acc={last.train_acc:.3f} val_acc={last.val_acc:.3f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        model = load_checkpoint(args.model)
    except (OSError, CheckpointError, ValueError, KeyError) as e:
        raise CommandError(f"cannot load model {args.model}: {e}", EXIT_USAGE) from None
    classes = model.meta.get("class_names") or class_dirs(args.data)
    size = model.input_shape[1]
    pixels, labels, _ = _load_images(args.data, classes, size)
    probs = predict_proba(model, prepare_images(pixels, size))
    report = evaluate_predictions(probs.data, labels, classes)
    written = write_eval_reports(report, args.out)
    print(f"overall accuracy {report.overall_acc:.4f}, macro AUC {report.macro_auc:.4f}; "
          f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


# parser --------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys (defaults):\n" + describe_keys()
    parser = argparse.ArgumentParser(
        prog="ganaug", description="DCGAN augmentation and VGG classification pipeline.",
        epilog=keys, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, sections):
        used = ", ".join(f"{s}.*" for s in sections) or "no config keys"
        return sub.add_parser(name, help=help_text, description=help_text,
                              epilog=f"this command reads {used}\n{keys}",
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = add("train-gan", "train one class-specific DCGAN", ["gan"])
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--data", required=True, help="dataset root with one directory per class")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_gan)

    p = add("generate", "sample images from a generator checkpoint", [])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--png", action="store_true", help="write PNG instead of PPM")
    p.set_defaults(func=cmd_generate)

    p = add("ssim", "per-class SSIM of generated against real images", ["ssim"])
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ssim)

    p = add("train-clf", "train the VGG classifier on a (generated) dataset", ["clf"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_clf)

    p = add("evaluate", "evaluate a classifier checkpoint on real images", ["clf"])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except InvalidConfig as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionMismatch, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NonFiniteGradient, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
