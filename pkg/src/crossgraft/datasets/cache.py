"""On-disk dataset cache.

Each (dataset, split) lives in its own directory:

    <root>/<name>/<split>/
        images.f32le    raw little-endian float32, C-order (count, 28, 28, channels)
        labels.u8       one uint8 class id per sample
        manifest.json   name, split, count, channels, content digest

The content digest is sha256 over the images file bytes followed by the
labels file bytes, so identical synthesis runs produce identical manifests.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import IngestionError, IntegrityError
from .sets import IMAGE_SIZE, LabeledImageSet

MANIFEST_NAME = "manifest.json"
IMAGES_NAME = "images.f32le"
LABELS_NAME = "labels.u8"
CACHE_FORMAT_VERSION = 1


def set_dir(root: str | Path, name: str, split: str) -> Path:
    return Path(root) / name / split


def _digest(images_bytes: bytes, labels_bytes: bytes) -> str:
    h = hashlib.sha256()
    h.update(images_bytes)
    h.update(labels_bytes)
    return h.hexdigest()


def save_set(s: LabeledImageSet, directory: str | Path) -> str:
    """Write one dataset split; returns its content digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = np.ascontiguousarray(s.images, dtype="<f4")
    labels = np.ascontiguousarray(s.labels, dtype=np.uint8)
    images_bytes = images.tobytes()
    labels_bytes = labels.tobytes()
    digest = _digest(images_bytes, labels_bytes)
    manifest = {
        "format_version": CACHE_FORMAT_VERSION,
        "name": s.name,
        "split": s.split,
        "count": int(s.count),
        "height": IMAGE_SIZE,
        "width": IMAGE_SIZE,
        "channels": int(s.channels),
        "images_file": IMAGES_NAME,
        "labels_file": LABELS_NAME,
        "content_digest": digest,
    }
    (directory / IMAGES_NAME).write_bytes(images_bytes)
    (directory / LABELS_NAME).write_bytes(labels_bytes)
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return digest


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise IngestionError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_set(directory: str | Path, verify: bool = True) -> LabeledImageSet:
    directory = Path(directory)
    m = load_manifest(directory)
    images_bytes = (directory / m["images_file"]).read_bytes()
    labels_bytes = (directory / m["labels_file"]).read_bytes()
    if verify and _digest(images_bytes, labels_bytes) != m["content_digest"]:
        raise IntegrityError(f"content digest mismatch for cached dataset in {directory}")
    shape = (m["count"], m["height"], m["width"], m["channels"])
    expected = int(np.prod(shape)) * 4
    if len(images_bytes) != expected:
        raise IngestionError(
            f"cached images file in {directory} holds {len(images_bytes)} bytes, "
            f"expected {expected}"
        )
    images = np.frombuffer(images_bytes, dtype="<f4").reshape(shape)
    labels = np.frombuffer(labels_bytes, dtype=np.uint8).astype(np.int64)
    return LabeledImageSet(images=images, labels=labels, name=m["name"], split=m["split"])
