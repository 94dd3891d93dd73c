"""Benchmark ingestion, synthesis, caching, and preprocessing."""

from .cache import load_set, save_set, set_dir
from .fetch import fetch_dataset
from .loaders import (
    BASE_DATASETS,
    DATASET_NAMES,
    DERIVED_DATASETS,
    EXPECTED_COUNTS,
    load_dataset,
)
from .sets import (
    IMAGE_SIZE,
    NUM_CLASSES,
    BackgroundPatchSet,
    LabeledImageSet,
    preprocess,
    preprocess_images,
)
from .synth import (
    background_patches_from_archive,
    blend_background,
    compose_m_digits,
    procedural_backgrounds,
)

__all__ = [
    "BASE_DATASETS",
    "DATASET_NAMES",
    "DERIVED_DATASETS",
    "EXPECTED_COUNTS",
    "IMAGE_SIZE",
    "NUM_CLASSES",
    "BackgroundPatchSet",
    "LabeledImageSet",
    "background_patches_from_archive",
    "blend_background",
    "compose_m_digits",
    "fetch_dataset",
    "load_dataset",
    "load_set",
    "preprocess",
    "preprocess_images",
    "procedural_backgrounds",
    "save_set",
    "set_dir",
]
