"""Ingestion of the raw benchmark archives.

`load_dataset` reads MNIST/Fashion IDX archives and the USPS libsvm dumps
directly from disk; the derived sets (mnist-m, fashion-m, m-digits) are read
from the on-disk cache produced by the synth pipeline. Nothing here touches
the network; see `fetch` for downloads.
"""

from __future__ import annotations

import bz2
import gzip
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, IngestionError
from . import cache
from .sets import IMAGE_SIZE, LabeledImageSet

BASE_DATASETS = ("mnist", "fashion", "usps")
DERIVED_DATASETS = ("mnist-m", "fashion-m", "m-digits")
DATASET_NAMES = BASE_DATASETS + DERIVED_DATASETS
SPLITS = ("train", "test")

# Standard-split cardinalities, enforced on ingest so a truncated archive
# cannot silently produce a short dataset.
EXPECTED_COUNTS = {
    ("mnist", "train"): 60000,
    ("mnist", "test"): 10000,
    ("fashion", "train"): 60000,
    ("fashion", "test"): 10000,
    ("usps", "train"): 7291,
    ("usps", "test"): 2007,
}

IDX_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}
USPS_FILES = {"train": "usps.bz2", "test": "usps.t.bz2"}


def raw_dir(root: str | Path, name: str) -> Path:
    return Path(root) / name / "raw"


def parse_idx_images(path: Path) -> np.ndarray:
    """Read a gzipped IDX3 image file into a float32 (count, h, w, 1) array in [0, 1]."""
    try:
        with gzip.open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestionError(f"cannot read image archive {path}: {e}") from e
    if len(data) < 16:
        raise IngestionError(f"truncated IDX image file {path}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != 0x803:
        raise IngestionError(f"bad IDX image magic {magic:#x} in {path}")
    body = np.frombuffer(data, dtype=np.uint8, offset=16)
    if body.size != count * rows * cols:
        raise IngestionError(
            f"IDX image file {path} declares {count} images but holds {body.size} bytes"
        )
    images = body.reshape(count, rows, cols, 1).astype(np.float32) / 255.0
    return images


def parse_idx_labels(path: Path) -> np.ndarray:
    try:
        with gzip.open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestionError(f"cannot read label archive {path}: {e}") from e
    if len(data) < 8:
        raise IngestionError(f"truncated IDX label file {path}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != 0x801:
        raise IngestionError(f"bad IDX label magic {magic:#x} in {path}")
    labels = np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size != count:
        raise IngestionError(
            f"IDX label file {path} declares {count} labels but holds {labels.size}"
        )
    return labels


def parse_usps(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a bz2 libsvm USPS dump into ((count, 16, 16, 1) in [0, 1], labels)."""
    try:
        with bz2.open(path, "rt") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read USPS archive {path}: {e}") from e
    images = np.zeros((len(lines), 256), dtype=np.float32)
    labels = np.zeros(len(lines), dtype=np.int64)
    for i, line in enumerate(lines):
        fields = line.split()
        if not fields:
            raise IngestionError(f"empty record at line {i + 1} of {path}")
        try:
            labels[i] = int(float(fields[0])) - 1  # archive labels run 1..10
            for item in fields[1:]:
                idx, val = item.split(":")
                images[i, int(idx) - 1] = float(val)
        except ValueError as e:
            raise IngestionError(f"malformed record at line {i + 1} of {path}: {e}") from e
    images = (images.reshape(-1, 16, 16, 1) + 1.0) / 2.0  # stored range is [-1, 1]
    return np.clip(images, 0.0, 1.0), labels


def resize_images(images: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear-resize (count, h, w, 1) images in [0, 1] to (count, size, size, 1)."""
    out = np.empty((images.shape[0], size, size, 1), dtype=np.float32)
    for i in range(images.shape[0]):
        img = Image.fromarray(images[i, :, :, 0], mode="F")
        out[i, :, :, 0] = np.asarray(img.resize((size, size), Image.BILINEAR))
    return np.clip(out, 0.0, 1.0)


def load_dataset(
    name: str, split: str, root: str | Path, strict_counts: bool = True
) -> LabeledImageSet:
    """Load one standard split, resized/normalized to (count, 28, 28, C) in [0, 1]."""
    if name not in DATASET_NAMES:
        raise ConfigurationError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}; expected one of {SPLITS}")

    if name in ("mnist", "fashion"):
        d = raw_dir(root, name)
        img_file, lbl_file = IDX_FILES[split]
        for f in (img_file, lbl_file):
            if not (d / f).exists():
                raise IngestionError(
                    f"missing raw archive {d / f}; run `crossgraft fetch --dataset {name}` first"
                )
        images = parse_idx_images(d / img_file)
        labels = parse_idx_labels(d / lbl_file)
    elif name == "usps":
        d = raw_dir(root, name)
        f = d / USPS_FILES[split]
        if not f.exists():
            raise IngestionError(
                f"missing raw archive {f}; run `crossgraft fetch --dataset usps` first"
            )
        images, labels = parse_usps(f)
        images = resize_images(images)
    else:
        set_dir = cache.set_dir(root, name, split)
        if not (set_dir / cache.MANIFEST_NAME).exists():
            raise IngestionError(
                f"derived dataset {name}/{split} not found under {set_dir}; "
                f"run `crossgraft synth {name}` first"
            )
        return cache.load_set(set_dir)

    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            f"{name}/{split}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    expected = EXPECTED_COUNTS.get((name, split))
    if strict_counts and expected is not None and images.shape[0] != expected:
        raise IngestionError(
            f"{name}/{split}: expected {expected} samples in the standard split, "
            f"got {images.shape[0]} (corrupt archive?)"
        )
    return LabeledImageSet(images=images, labels=labels, name=name, split=split)
