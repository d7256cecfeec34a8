"""Command-line exporter: run a pretrained (or seeded) network over a
labeled image directory and write the tapped feature maps as an FMAP
container; `finetune` trains the two-class baseline and dumps curves."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .export import DEFAULT_CLASS_NAMES, ExportError, export_maps
from .finetune import FinetuneError, finetune_baseline, write_curves_csv
from .nets import MODEL_NAMES, TapError, parse_taps
from .preprocess import PreprocessError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(Exception):
    pass


def read_labels_csv(path: Path) -> dict[str, int]:
    """filename,label rows; labels must be 0/1; sample_id is the file stem."""
    out: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["filename", "label"]:
            raise ConfigError(f"{path}: expected header 'filename,label'")
        for rec in reader:
            if len(rec) < 2:
                raise ConfigError(f"{path}: short row {rec!r}")
            name, label = rec[0].strip(), rec[1].strip()
            if label not in ("0", "1"):
                raise ConfigError(f"{path}: label for {name!r} must be 0 or 1")
            sample_id = Path(name).stem
            if sample_id in out:
                raise ConfigError(f"{path}: duplicate sample {sample_id!r}")
            out[sample_id] = int(label)
    return out


def collect_images(images_dir: Path, labels: dict[str, int]) -> list[tuple[str, Path]]:
    by_stem = {}
    for path in sorted(images_dir.iterdir()):
        if path.is_file():
            by_stem.setdefault(path.stem, path)
    missing = sorted(set(labels) - set(by_stem))
    if missing:
        raise ConfigError(f"labeled image(s) not found in {images_dir}: {missing}")
    return [(stem, by_stem[stem]) for stem in sorted(labels)]


def cmd_export(args) -> int:
    images_dir = Path(args.images)
    labels_path = Path(args.labels)
    if not images_dir.is_dir():
        raise ConfigError(f"image directory not found: {images_dir}")
    if not labels_path.is_file():
        raise ConfigError(f"labels file not found: {labels_path}")
    if args.weights and not Path(args.weights).is_file():
        raise ConfigError(f"weights file not found: {args.weights}")
    spec = parse_taps(args.model, args.taps)
    if args.image_size:
        from dataclasses import replace

        spec = replace(spec, image_size=args.image_size)
    labels = read_labels_csv(labels_path)
    images = collect_images(images_dir, labels)
    class_names = tuple(args.class_names.split(",")) if args.class_names else DEFAULT_CLASS_NAMES
    if len(class_names) != 2:
        raise ConfigError("--class-names needs exactly two comma-separated names")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        count = export_maps(
            images,
            labels,
            spec,
            fh,
            weights_path=args.weights,
            seed=args.seed,
            network_tag=args.tag,
            class_names=class_names,
        )
    print(f"exported {count} sample(s) with taps {','.join(spec.taps)} to {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    images_dir = Path(args.images)
    labels_path = Path(args.labels)
    if not images_dir.is_dir():
        raise ConfigError(f"image directory not found: {images_dir}")
    if not labels_path.is_file():
        raise ConfigError(f"labels file not found: {labels_path}")
    labels = read_labels_csv(labels_path)
    images = collect_images(images_dir, labels)
    pairs = [(path, labels[stem]) for stem, path in images]
    n_val = max(1, round(len(pairs) * args.val_fraction)) if args.epochs else 0
    val_pairs = pairs[:n_val]
    train_pairs = pairs[n_val:]
    model, curves = finetune_baseline(
        train_pairs,
        val_pairs,
        args.model,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        image_size=args.image_size or 256,
        seed=args.seed,
        weights_path=args.weights,
    )
    out = Path(args.out_curves)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_curves_csv(curves, out)
    if args.out_weights:
        import torch

        torch.save(model.state_dict(), args.out_weights)
    print(f"fine-tuned for {args.epochs} epoch(s); curves at {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapexport")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="write tapped feature maps as FMAP")
    exp.add_argument("--model", choices=MODEL_NAMES, required=True)
    exp.add_argument("--taps", default="default",
                     help="'default', 'all', or comma-separated tap names")
    exp.add_argument("--images", required=True, help="directory of images")
    exp.add_argument("--labels", required=True, help="CSV with filename,label rows")
    exp.add_argument("--out", required=True, help="output container path")
    exp.add_argument("--weights", help="state-dict checkpoint; omitted = seeded init")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--tag", help="network_tag override (default: model name)")
    exp.add_argument("--image-size", type=int, default=None)
    exp.add_argument("--class-names", help="two names, e.g. non-covid,covid")

    fin = sub.add_parser("finetune", help="train the two-class baseline")
    fin.add_argument("--model", choices=MODEL_NAMES, required=True)
    fin.add_argument("--images", required=True)
    fin.add_argument("--labels", required=True)
    fin.add_argument("--epochs", type=int, default=10)
    fin.add_argument("--batch-size", type=int, default=10)
    fin.add_argument("--lr", type=float, default=1e-4)
    fin.add_argument("--momentum", type=float, default=0.9)
    fin.add_argument("--val-fraction", type=float, default=0.2)
    fin.add_argument("--seed", type=int, default=0)
    fin.add_argument("--weights")
    fin.add_argument("--image-size", type=int, default=None)
    fin.add_argument("--out-curves", required=True)
    fin.add_argument("--out-weights")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        return cmd_finetune(args)
    except (ConfigError, TapError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExportError, PreprocessError, FinetuneError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # pragma: no cover - defensive
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
