"""Command-line entry point.

Datasets on disk use the CIFAR-10 record layout (one label byte, then planar
pixels).  Each dataset file may carry a sidecar manifest ``<file>.json`` that
records its shape and class count; without one, CIFAR-10 geometry is assumed.

Exit codes: 0 ok, 2 usage, 3 format or I/O failure, 4 bad parameters.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from . import rng as _rng
from .core import Image, LabeledDataset
from .countermeasures import AugmentationConfig, augment_dataset, center_crop, noise_dataset
from .dataio import (
    CIFAR_CLASSES, CIFAR_SHAPE, DatasetManifest, SyntheticSpec, atomic_write, checksum_hex,
    decode_records, encode_records, generate_synthetic_dataset, read_mnist, read_ppm, write_ppm,
)
from .errors import ConfigError, FormatError, ParameterError, ShapeError
from .glyphs import GlyphSource
from .shortcuts import ShortcutParams, class_masks, protect_dataset
from .trainer import ModelConfig, TrainConfig, train

log = logging.getLogger("shortcut_shield")

EXIT_USAGE, EXIT_FORMAT, EXIT_PARAM = 2, 3, 4

# desk-scale stand-in task used by `synth` defaults and the acceptance suite
BENCHMARK = dict(num_classes=10, n_per_class=800, val_per_class=100, signal_strength=0.18,
                 noise_sigma=0.0)


class UsageError(Exception):
    pass


# -- dataset files -----------------------------------------------------------

def sidecar(path) -> str:
    return os.fspath(path) + ".json"


def load_dataset(path, manifest_path=None):
    """Read a record file, taking geometry from its manifest when there is one."""
    manifest_path = manifest_path or sidecar(path)
    manifest = None
    if os.path.exists(manifest_path):
        manifest = DatasetManifest.load(manifest_path)
        shape, classes = tuple(manifest.shape), manifest.classes
    else:
        shape, classes = CIFAR_SHAPE, CIFAR_CLASSES
    with open(path, "rb") as f:
        raw = f.read()
    return decode_records(raw, shape, classes), raw, manifest


def save_dataset(ds: LabeledDataset, path, manifest: DatasetManifest, manifest_path=None):
    payload = encode_records(ds)
    atomic_write(path, payload)
    manifest.save(manifest_path or sidecar(path))


# -- argument helpers --------------------------------------------------------

def _seed(text):
    try:
        return _rng.parse_seed(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a decimal or 0x-hex seed: {text!r}") from None


def _shortcut_args(p):
    p.add_argument("--method", choices=("pixel", "watermark", "brightness"), default="pixel")
    p.add_argument("--mu", type=float, default=0.01)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--iterations", type=int, default=32)
    p.add_argument("--square-side", type=int, default=None)
    p.add_argument("--mnist-images", help="IDX image file to draw watermark digits from")
    p.add_argument("--mnist-labels", help="IDX label file matching --mnist-images")


def _augment_args(p, preset_default):
    p.add_argument("--preset", choices=("none", "aggressive"), default=preset_default,
                   help="starting point for the augmentation flags below")
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--flip-prob", type=float, default=None)
    p.add_argument("--translate", type=float, default=None)
    p.add_argument("--rotate", type=float, default=None)
    p.add_argument("--brightness", type=float, default=None)
    p.add_argument("--contrast", type=float, nargs=2, default=None, metavar=("LOW", "HIGH"))
    p.add_argument("--noise-sigma", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shortcut-shield",
                                     description="Class-conditional shortcut protection for image datasets.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protect", help="apply a shortcut modification to a dataset")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="output manifest path (default: <out>.json)")
    p.add_argument("--in-manifest", help="input manifest (default: <input>.json if present)")
    p.add_argument("--seed", type=_seed, default=0)
    _shortcut_args(p)

    p = sub.add_parser("evaluate", help="train the oracle classifier and report accuracies")
    p.add_argument("train")
    p.add_argument("val")
    p.add_argument("--out", required=True, help="directory for run and summary CSVs")
    p.add_argument("--lr", type=float, action="append", help="repeatable; default 0.1 and 0.01")
    p.add_argument("--seed", type=_seed, action="append", help="repeatable; default 0")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--model", choices=("linear", "mlp"), default="linear")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--augment", action="store_true", help="train with per-epoch augmentation")
    p.add_argument("--noise-mode", choices=("once", "per-epoch"), default="once")
    _augment_args(p, "aggressive")

    p = sub.add_parser("countermeasure", help="apply noise/augmentation to a dataset on disk")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=_seed, default=0)
    _augment_args(p, "none")

    p = sub.add_parser("synth", help="write the synthetic train/val task")
    p.add_argument("--out", required=True, help="directory; writes train.bin and val.bin")
    p.add_argument("--classes", type=int, default=BENCHMARK["num_classes"])
    p.add_argument("--n-per-class", type=int, default=BENCHMARK["n_per_class"])
    p.add_argument("--val-per-class", type=int, default=BENCHMARK["val_per_class"])
    p.add_argument("--signal", type=float, default=BENCHMARK["signal_strength"])
    p.add_argument("--noise-sigma", type=float, default=BENCHMARK["noise_sigma"])
    p.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("inspect", help="export one image (and its class mask) as PPM; "
                                       "a .ppm/.pgm input is validated and re-exported")
    p.add_argument("input")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", help="also write the per-class mask, if the manifest has one")
    p.add_argument("--manifest")
    return parser


def _augmentation(args) -> AugmentationConfig:
    cfg = AugmentationConfig() if args.preset == "aggressive" else AugmentationConfig.neutral()
    overrides = dict(crop_size=args.crop, flip_prob=args.flip_prob, translate_frac=args.translate,
                     rotate_deg_max=args.rotate, brightness_delta=args.brightness,
                     noise_sigma=args.noise_sigma)
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if args.contrast is not None:
        cfg.contrast_range = tuple(args.contrast)
    return cfg


def _glyphs(args):
    if bool(args.mnist_images) != bool(args.mnist_labels):
        raise UsageError("--mnist-images and --mnist-labels go together")
    if args.mnist_images:
        images, labels = read_mnist(args.mnist_images, args.mnist_labels)
        return GlyphSource.from_mnist(images, labels), "mnist"
    return GlyphSource.builtin(), "builtin"


# -- subcommands -------------------------------------------------------------

def cmd_protect(args):
    params = ShortcutParams(args.method, args.mu, args.sigma, args.alpha, args.gamma,
                            args.iterations, args.square_side, args.seed).validate()
    if os.path.abspath(args.input) == os.path.abspath(args.out):
        raise UsageError("--out must differ from the input file")
    glyphs, glyph_kind = _glyphs(args) if params.method == "watermark" else (None, None)
    ds, raw, _ = load_dataset(args.input, args.in_manifest)
    protected = protect_dataset(ds, params, glyphs)
    extra = {"glyphs": glyph_kind} if glyph_kind else {}
    if params.method == "brightness":
        extra["square_side"] = params.side_for(ds.shape)
    manifest = DatasetManifest(method=params.method, params=params.to_dict(),
                               checksum=checksum_hex(raw), shape=list(ds.shape),
                               classes=ds.num_classes, seed=params.seed, extra=extra)
    save_dataset(protected, args.out, manifest, args.manifest)
    log.info("protected %d images with %s -> %s", len(ds), params.method, args.out)
    return 0


def _fmt(x: float) -> str:
    return format(x, "g")


def cmd_evaluate(args):
    lrs = args.lr or [0.1, 0.01]
    seeds = args.seed or [0]
    aug = _augmentation(args) if args.augment else None
    noise_once = 0.0
    if aug is not None and args.noise_mode == "once":
        noise_once, aug.noise_sigma = aug.noise_sigma, 0.0
    for lr in lrs:
        TrainConfig(learning_rate=lr, epochs=args.epochs, batch_size=args.batch_size).validate()
    if aug is not None:
        aug.validate()
    train_ds, _, _ = load_dataset(args.train)
    val_ds, _, _ = load_dataset(args.val)
    if train_ds.shape != val_ds.shape and aug is None:
        val_ds = _match_geometry(val_ds, train_ds.shape)
    if noise_once > 0:
        train_ds = noise_dataset(train_ds, noise_once, seeds[0])
    os.makedirs(args.out, exist_ok=True)
    model_cfg = ModelConfig(args.model, args.hidden)
    rows = []
    for lr in lrs:
        for seed in seeds:
            cfg = TrainConfig(lr, args.epochs, args.batch_size, seed, True, aug)
            _, report = train(model_cfg, train_ds, val_ds, cfg)
            name = f"run_lr{_fmt(lr)}_seed{seed}.csv"
            atomic_write(os.path.join(args.out, name), report.to_csv().encode())
            rows.append((lr, seed, report))
            log.info("lr=%g seed=%d best val %.4f gap %.4f", lr, seed,
                     report.best_val_accuracy, report.generalization_gap)
    lines = ["lr,seed,best_val_acc,final_train_acc,final_val_acc,gap"]
    for lr, seed, r in rows:
        lines.append(f"{_fmt(lr)},{seed},{r.best_val_accuracy!r},{r.final.train_accuracy!r},"
                     f"{r.final.val_accuracy!r},{r.generalization_gap!r}")
    best = max(rows, key=lambda t: t[2].best_val_accuracy)
    lines.append(f"best,{best[1]},{best[2].best_val_accuracy!r},{best[2].final.train_accuracy!r},"
                 f"{best[2].final.val_accuracy!r},{best[2].generalization_gap!r}")
    atomic_write(os.path.join(args.out, "summary.csv"), ("\n".join(lines) + "\n").encode())
    print(f"best val accuracy {best[2].best_val_accuracy:.4f} (lr={_fmt(best[0])}, seed={best[1]})")
    return 0


def _match_geometry(val_ds, shape):
    """Center-crop validation images down to a (cropped) training geometry."""
    w, h, c = shape
    vw, vh, vc = val_ds.shape
    if w != h or vc != c or w > min(vw, vh):
        raise ConfigError(f"validation shape {val_ds.shape} cannot match training shape {shape}")
    images = [center_crop(img, w) for img in val_ds.images]
    return LabeledDataset(images, list(val_ds.labels), val_ds.num_classes, shape)


def cmd_countermeasure(args):
    cfg = _augmentation(args).validate()
    if os.path.abspath(args.input) == os.path.abspath(args.out):
        raise UsageError("--out must differ from the input file")
    ds, raw, src_manifest = load_dataset(args.input)
    cfg.validate(ds.shape)
    out = augment_dataset(ds, cfg, args.seed)
    manifest = DatasetManifest(method="countermeasure", params=cfg.to_dict(),
                               checksum=checksum_hex(raw), shape=list(out.shape),
                               classes=ds.num_classes, seed=args.seed,
                               extra={"source_method": src_manifest.method} if src_manifest else {})
    save_dataset(out, args.out, manifest, args.manifest)
    return 0


def cmd_synth(args):
    spec = SyntheticSpec(args.classes, args.n_per_class, CIFAR_SHAPE, args.signal,
                         args.noise_sigma, args.seed, args.val_per_class).validate()
    train_ds, val_ds = generate_synthetic_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    params = {"n_per_class": spec.n_per_class, "val_per_class": spec.val_per_class,
              "signal_strength": spec.signal_strength, "noise_sigma": spec.noise_sigma}
    for name, ds in (("train", train_ds), ("val", val_ds)):
        manifest = DatasetManifest(method="synthetic", params=dict(params, split=name),
                                   checksum=checksum_hex(b""), shape=list(spec.shape),
                                   classes=spec.num_classes, seed=spec.seed)
        save_dataset(ds, os.path.join(args.out, f"{name}.bin"), manifest)
    print(f"wrote {len(train_ds)} train and {len(val_ds)} val images to {args.out}")
    return 0


PNM_SUFFIXES = (".ppm", ".pgm", ".pnm")


def cmd_inspect(args):
    if os.fspath(args.input).lower().endswith(PNM_SUFFIXES):
        # a single image: validate and re-export it
        write_ppm(read_ppm(args.input), args.out)
        return 0
    ds, _, manifest = load_dataset(args.input, args.manifest)
    if not 0 <= args.index < len(ds):
        raise ConfigError(f"index {args.index} outside 0..{len(ds) - 1}")
    write_ppm(ds.images[args.index], args.out)
    if args.mask_out:
        if manifest is None or manifest.method not in ("pixel", "brightness"):
            raise ConfigError("no per-class mask: input manifest names no pixel/brightness method")
        params = ShortcutParams(**manifest.params).validate()
        label = ds.labels[args.index]
        mask = class_masks(params, ds.shape, ds.num_classes)[label].data
        write_ppm(Image(mask / mask.max()), args.mask_out)
    return 0


COMMANDS = {"protect": cmd_protect, "evaluate": cmd_evaluate, "countermeasure": cmd_countermeasure,
            "synth": cmd_synth, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (ParameterError, ConfigError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
