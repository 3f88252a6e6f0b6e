"""Command-line entry point for the feature exporter."""

from __future__ import annotations

import argparse
import sys

from .backbones import BACKBONES
from .export import ExportManifest, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="Export penultimate-layer CNN embeddings of an image "
        "folder (one subdirectory per class) into an MQDF feature file.",
    )
    parser.add_argument("--backbone", choices=BACKBONES, required=True)
    parser.add_argument("--split", required=True, help="class-per-directory image root")
    parser.add_argument("--out", required=True, help="MQDF output path")
    parser.add_argument("--resize", type=int, default=84, help="e.g. 84 or 32")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--weights",
        default=None,
        help="path to a state dict, or 'torchvision' for the standard "
        "pretrained resnet18 weights",
    )
    parser.add_argument(
        "--random-init",
        action="store_true",
        help="export with freshly initialized weights (format testing only)",
    )
    parser.add_argument("--no-normalize", action="store_true")
    parser.add_argument("--expect-dim", type=int, default=None)
    args = parser.parse_args(argv)

    if args.weights is None and not args.random_init:
        parser.error("supply --weights PATH|torchvision, or pass --random-init")
    manifest = ExportManifest(
        backbone=args.backbone,
        split_dir=args.split,
        out_path=args.out,
        resize=args.resize,
        batch_size=args.batch_size,
        device=args.device,
        weights=args.weights if args.weights is not None else "random",
        normalize=not args.no_normalize,
        expect_dim=args.expect_dim,
    )
    try:
        summary = export(manifest)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"featexport: error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {summary['rows']} x {summary['dim']} features over "
        f"{summary['classes']} classes -> {summary['out']}"
    )
    print(f"class map -> {summary['class_map']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
