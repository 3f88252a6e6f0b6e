"""Batch export of penultimate-layer embeddings over an image folder.

The split directory holds one subdirectory per class; labels follow the
sorted class-directory names and rows follow the sorted file listing
within each class, so exporting the same split twice yields the same
order. Inference runs in eval mode with no augmentation: resize the short
side, center crop, optional channel normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from .backbones import build_backbone, feature_width
from .mqdf import write_mqdf

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".webp")

# channel statistics the standard pretrained backbones were trained with
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExportManifest:
    backbone: str
    split_dir: str
    out_path: str
    resize: int = 84
    batch_size: int = 64
    device: str = "cpu"
    weights: str = "random"  # "random" | "torchvision" | state-dict path
    normalize: bool = True
    expect_dim: int | None = None


def list_split(split_dir) -> list[tuple[str, list[Path]]]:
    """(class name, sorted image paths) per class, classes sorted by name."""
    root = Path(split_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"split directory not found: {root}")
    classes = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(
            p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if files:
            classes.append((sub.name, files))
    if not classes:
        raise FileNotFoundError(f"no class directories with images under {root}")
    return classes


def export(manifest: ExportManifest) -> dict:
    """Run the export; returns a summary dict (rows, dim, classes)."""
    classes = list_split(manifest.split_dir)
    model = build_backbone(manifest.backbone, manifest.weights, manifest.device)
    d = feature_width(model, manifest.resize, manifest.device)
    if manifest.expect_dim is not None and d != manifest.expect_dim:
        raise ValueError(
            f"backbone {manifest.backbone!r} produces {d}-dim features at "
            f"{manifest.resize}px, manifest expects {manifest.expect_dim}"
        )

    steps = [
        transforms.Resize(manifest.resize),
        transforms.CenterCrop(manifest.resize),
        transforms.ToTensor(),
    ]
    if manifest.normalize:
        steps.append(transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD))
    transform = transforms.Compose(steps)

    features = []
    labels = []
    batch = []

    def flush():
        if not batch:
            return
        with torch.no_grad():
            out = model(torch.stack(batch).to(manifest.device))
        features.append(out.cpu().numpy().astype(np.float32))
        batch.clear()

    for index, (_, files) in enumerate(classes):
        for path in files:
            try:
                with Image.open(path) as img:
                    batch.append(transform(img.convert("RGB")))
            except (OSError, SyntaxError) as exc:
                raise OSError(f"unreadable image {path}: {exc}") from exc
            labels.append(index)
            if len(batch) >= manifest.batch_size:
                flush()
    flush()

    all_features = np.vstack(features)
    all_labels = np.array(labels, dtype=np.uint32)
    write_mqdf(manifest.out_path, all_features, all_labels, class_count=len(classes))
    sidecar = Path(manifest.out_path).with_suffix(
        Path(manifest.out_path).suffix + ".classes.txt"
    )
    with open(sidecar, "w", encoding="utf-8") as fh:
        for index, (name, _) in enumerate(classes):
            fh.write(f"{index}\t{name}\n")
    return {
        "rows": int(all_labels.size),
        "dim": d,
        "classes": len(classes),
        "out": str(manifest.out_path),
        "class_map": str(sidecar),
    }
