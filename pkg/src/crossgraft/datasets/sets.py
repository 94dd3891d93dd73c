"""Core dataset containers and preprocessing.

Images travel through the package as float32 NHWC arrays. A raw set holds
values in [0, 1]; `preprocess` rescales to [-1, 1] and, when asked, widens
grayscale to three channels so both domains share the network input shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, DataError

NUM_CLASSES = 10
IMAGE_SIZE = 28


@dataclass
class LabeledImageSet:
    """A split of one benchmark dataset: images (count, 28, 28, C) + labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str
    split: str

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        validate_set(self)

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[3]


@dataclass
class BackgroundPatchSet:
    """28x28 RGB patches in [0, 1] used to pollute grayscale foregrounds."""

    patches: np.ndarray
    source: str

    def __post_init__(self):
        self.patches = np.ascontiguousarray(self.patches, dtype=np.float32)
        if self.patches.ndim != 4 or self.patches.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise DataError(
                f"background patches must be (count, {IMAGE_SIZE}, {IMAGE_SIZE}, 3), "
                f"got {self.patches.shape}"
            )
        if self.patches.size and (self.patches.min() < 0.0 or self.patches.max() > 1.0):
            raise DataError("background patch values must lie in [0, 1]")

    @property
    def count(self) -> int:
        return self.patches.shape[0]


def validate_set(s: LabeledImageSet) -> None:
    if s.images.ndim != 4:
        raise DataError(f"{s.name}/{s.split}: images must be rank 4, got {s.images.shape}")
    if s.images.shape[1:3] != (IMAGE_SIZE, IMAGE_SIZE):
        raise DataError(
            f"{s.name}/{s.split}: images must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {s.images.shape}"
        )
    if s.images.shape[3] not in (1, 3):
        raise DataError(f"{s.name}/{s.split}: channels must be 1 or 3, got {s.images.shape[3]}")
    if s.labels.shape != (s.images.shape[0],):
        raise DataError(
            f"{s.name}/{s.split}: labels shape {s.labels.shape} does not match "
            f"{s.images.shape[0]} images"
        )
    if s.labels.size and (s.labels.min() < 0 or s.labels.max() >= NUM_CLASSES):
        raise DataError(f"{s.name}/{s.split}: labels must lie in [0, {NUM_CLASSES})")


def preprocess_images(images: np.ndarray, target_channels: int) -> np.ndarray:
    """Rescale [0, 1] images to [-1, 1], replicating grayscale to RGB if asked."""
    images = np.asarray(images, dtype=np.float32)
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ConfigurationError(
            "preprocess expects pixel values in [0, 1]; got range "
            f"[{images.min():.4f}, {images.max():.4f}] (already preprocessed?)"
        )
    channels = images.shape[3]
    if channels != target_channels:
        if channels == 1 and target_channels == 3:
            images = np.repeat(images, 3, axis=3)
        else:
            raise ConfigurationError(
                f"cannot convert {channels}-channel images to {target_channels} channels; "
                "only 1->3 replication is supported"
            )
    return images * 2.0 - 1.0


def preprocess(s: LabeledImageSet, target_channels: int) -> LabeledImageSet:
    """Whole-set counterpart of `preprocess_images`."""
    return replace(s, images=preprocess_images(s.images, target_channels))
