"""Directory-per-class datasets: split, manifests, batch loading.

A dataset is root/<class_name>/<images>. Classes index alphabetically.
Splitting shuffles each class with its own seed-derived stream and sends the
first ceil(fraction * n) files to train, the rest to test, so both manifests
partition the file set exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .augment import IMAGE_EXTS
from .ppm import read_image, resize_bilinear
from .tensor import Tensor

_SPLIT_STREAM = 101


@dataclass
class Split:
    classes: list[str]
    train: list[tuple[str, int]]  # (path relative to root, class index)
    test: list[tuple[str, int]]
    warnings: list[str] = field(default_factory=list)


def list_classes(root: str) -> list[str]:
    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise ValueError(f"{root}: no class subdirectories")
    return classes


def list_images(root: str, cls: str) -> list[str]:
    cdir = os.path.join(root, cls)
    return [n for n in sorted(os.listdir(cdir)) if n.lower().endswith(IMAGE_EXTS)]


def split_dataset(root: str, fraction: float, seed: int) -> Split:
    """Per-class seeded shuffle; first ceil(fraction*n) files to train."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    classes = list_classes(root)
    split = Split(classes=classes, train=[], test=[])
    for idx, cls in enumerate(classes):
        files = list_images(root, cls)
        if not files:
            raise ValueError(f"{root}/{cls}: class directory has no images")
        rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM, idx]))
        order = rng.permutation(len(files))
        n_train = math.ceil(fraction * len(files))
        for rank, j in enumerate(order):
            rel = f"{cls}/{files[j]}"
            (split.train if rank < n_train else split.test).append((rel, idx))
        if n_train == len(files):
            split.warnings.append(f"class {cls}: all {len(files)} samples in train, test empty")
    return split


def write_manifest(path: str, entries: list[tuple[str, int]], classes: list[str]) -> None:
    """One `relpath<TAB>class_name` line per file."""
    with open(path, "w", encoding="utf-8") as fh:
        for rel, idx in entries:
            fh.write(f"{rel}\t{classes[idx]}\n")


def read_manifest(path: str, classes: list[str]) -> list[tuple[str, int]]:
    index = {c: i for i, c in enumerate(classes)}
    out: list[tuple[str, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                rel, cls = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'path<TAB>class'") from None
            if cls not in index:
                raise ValueError(f"{path}:{lineno}: unknown class {cls!r}")
            out.append((rel, index[cls]))
    return out


def load_input(path: str, resize_to: int) -> np.ndarray:
    """Decode, bilinear-resize to a square, and normalize to [0,1] as a
    (3, resize_to, resize_to) float64 array."""
    img = resize_bilinear(read_image(path), resize_to, resize_to)
    return img.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def batch_tensor(arrays: list[np.ndarray]) -> Tensor:
    return Tensor(np.stack(arrays, axis=0))
