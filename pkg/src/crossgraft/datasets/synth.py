"""Synthesis of the derived benchmark datasets.

Implements the background-blended variants (mnist-m, fashion-m) and the
multi-digit composites (m-digits). All generators are pure functions of
(input set, seed): per-sample randomness is derived from (seed, sample
index), so sample order — not thread schedule — determines the output.
"""

from __future__ import annotations

import tarfile
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError
from .sets import IMAGE_SIZE, BackgroundPatchSet, LabeledImageSet

# stream tags keep the per-sample seed derivations of distinct generators apart
_BLEND_STREAM = 1
_DIGITS_STREAM = 2
_TEXTURE_STREAM = 3
_CROP_STREAM = 4

FOREGROUND_THRESHOLD = 0.05


def _sample_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng((seed, stream, index))


def blend_background(
    base: LabeledImageSet, backgrounds: BackgroundPatchSet, seed: int
) -> LabeledImageSet:
    """Pollute grayscale digits with RGB textures: out = |background - base| per channel."""
    if base.channels != 1:
        raise ConfigurationError(
            f"blend_background expects a grayscale base set, got {base.channels} channels"
        )
    if backgrounds.count == 0:
        raise ConfigurationError("blend_background needs a non-empty background patch set")

    picks = np.empty(base.count, dtype=np.int64)
    for i in range(base.count):
        picks[i] = _sample_rng(seed, _BLEND_STREAM, i).integers(0, backgrounds.count)

    out = np.abs(backgrounds.patches[picks] - base.images)
    name = f"{base.name}-m" if not base.name.endswith("-m") else base.name
    return LabeledImageSet(images=out, labels=base.labels.copy(), name=name, split=base.split)


def _crop_foreground(image: np.ndarray) -> np.ndarray:
    """Crop a (28, 28) glyph to its bounding box; blank images pass through."""
    mask = image > FOREGROUND_THRESHOLD
    if not mask.any():
        return image
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return image[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def _resize_gray(image: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    img = Image.fromarray(image.astype(np.float32), mode="F")
    return np.clip(np.asarray(img.resize((size, size), Image.BILINEAR)), 0.0, 1.0)


def compose_m_digits(
    base: LabeledImageSet, seed: int, return_meta: bool = False
) -> LabeledImageSet | tuple[LabeledImageSet, list[list[int]]]:
    """Build multi-digit composites: 1-3 digits side by side, label = central digit.

    Digits are cropped to their bounding boxes, laid out left to right with
    0-2 px gaps and +-2 px vertical jitter, then the strip is resized back
    to 28x28. For an even digit count the left-of-center digit is "central".
    """
    if base.channels != 1:
        raise ConfigurationError("compose_m_digits expects a grayscale single-digit base set")
    if base.count == 0:
        raise ConfigurationError("compose_m_digits needs a non-empty base set")

    images = np.zeros((base.count, IMAGE_SIZE, IMAGE_SIZE, 1), dtype=np.float32)
    labels = np.zeros(base.count, dtype=np.int64)
    meta: list[list[int]] = []

    for i in range(base.count):
        rng = _sample_rng(seed, _DIGITS_STREAM, i)
        k = int(rng.integers(1, 4))
        picks = rng.integers(0, base.count, size=k)
        gaps = rng.integers(0, 3, size=max(k - 1, 0))
        jitter = rng.integers(-2, 3, size=k)

        crops = [_crop_foreground(base.images[j, :, :, 0]) for j in picks]
        width = sum(c.shape[1] for c in crops) + int(gaps.sum())
        canvas = np.zeros((IMAGE_SIZE, width), dtype=np.float32)
        x = 0
        for d, crop in enumerate(crops):
            h, w = crop.shape
            y = (IMAGE_SIZE - h) // 2 + int(jitter[d])
            y = min(max(y, 0), IMAGE_SIZE - h)
            np.maximum(canvas[y : y + h, x : x + w], crop, out=canvas[y : y + h, x : x + w])
            x += w + (int(gaps[d]) if d < k - 1 else 0)

        images[i, :, :, 0] = _resize_gray(canvas)
        chosen = [int(base.labels[j]) for j in picks]
        labels[i] = chosen[(k - 1) // 2]
        if return_meta:
            meta.append(chosen)

    out = LabeledImageSet(images=images, labels=labels, name="m-digits", split=base.split)
    return (out, meta) if return_meta else out


def procedural_backgrounds(count: int, seed: int) -> BackgroundPatchSet:
    """Seeded colored value-noise textures; offline stand-in for real photo crops."""
    if count <= 0:
        raise ConfigurationError("background patch count must be positive")
    patches = np.zeros((count, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    for i in range(count):
        rng = _sample_rng(seed, _TEXTURE_STREAM, i)
        grid = int(rng.integers(3, 9))
        base_color = rng.uniform(0.1, 0.9, size=3)
        amplitude = rng.uniform(0.2, 0.5)
        for c in range(3):
            coarse = rng.uniform(-1.0, 1.0, size=(grid, grid)).astype(np.float32)
            img = Image.fromarray(coarse, mode="F").resize(
                (IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR
            )
            patches[i, :, :, c] = base_color[c] + amplitude * np.asarray(img)
    np.clip(patches, 0.0, 1.0, out=patches)
    return BackgroundPatchSet(patches=patches, source=f"procedural:{seed}")


def _iter_archive_images(path: Path):
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.suffix.lower() in (".jpg", ".jpeg", ".png", ".bmp"):
                yield Image.open(p)
    elif tarfile.is_tarfile(path):
        with tarfile.open(path) as tar:
            for member in sorted(tar.getmembers(), key=lambda m: m.name):
                if member.isfile() and Path(member.name).suffix.lower() in (
                    ".jpg",
                    ".jpeg",
                    ".png",
                    ".bmp",
                ):
                    f = tar.extractfile(member)
                    if f is not None:
                        yield Image.open(f).copy()
    else:
        raise ConfigurationError(f"background source {path} is neither a directory nor a tarball")


def background_patches_from_archive(
    source: str | Path, count: int, seed: int
) -> BackgroundPatchSet:
    """Random 28x28 crops from a directory or tarball of photographs."""
    source = Path(source)
    pool = []
    for img in _iter_archive_images(source):
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        if arr.shape[0] >= IMAGE_SIZE and arr.shape[1] >= IMAGE_SIZE:
            pool.append(arr)
    if not pool:
        raise ConfigurationError(f"no usable images (>= 28x28 RGB) found under {source}")

    patches = np.zeros((count, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    for i in range(count):
        rng = _sample_rng(seed, _CROP_STREAM, i)
        img = pool[int(rng.integers(0, len(pool)))]
        y = int(rng.integers(0, img.shape[0] - IMAGE_SIZE + 1))
        x = int(rng.integers(0, img.shape[1] - IMAGE_SIZE + 1))
        patches[i] = img[y : y + IMAGE_SIZE, x : x + IMAGE_SIZE]
    return BackgroundPatchSet(patches=patches, source=str(source))
