"""Shared fixtures: a reduced-size model config and a synthetic 10-class
glyph benchmark that stands in for the digit datasets when the real
archives are not on disk."""

import numpy as np
import pytest
import torch

from crossgraft.config import ExperimentConfig
from crossgraft.datasets import LabeledImageSet

torch.set_num_threads(1)

TINY_ARCH = dict(
    latent_dim=32,
    enc_filters=(8, 12, 16, 24),
    enc_kernels=(5, 5, 3, 3),
    dec_filters=(24, 16, 12, 8, 6, 3),
    gen_filters=8,
    gen_blocks=2,
    disc_filters=(8, 12, 16, 24),
    feature_dim=16,
)


def tiny_config(tmp_path, **overrides) -> ExperimentConfig:
    base = dict(
        source="mnist",
        target="usps",
        batch_size=8,
        total_steps=4,
        out_dir=str(tmp_path / "run"),
        data_root=str(tmp_path / "data"),
        checkpoint_every=1000,
    )
    base.update(TINY_ARCH)
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def config(tmp_path):
    return tiny_config(tmp_path)


def _stroke(canvas, y0, y1, x0, x1):
    canvas[y0:y1, x0:x1] = 1.0


def glyph_template(label: int) -> np.ndarray:
    """A crude, easily classifiable 20x20 shape per class."""
    t = np.zeros((20, 20), dtype=np.float32)
    yy, xx = np.mgrid[0:20, 0:20]
    if label == 0:
        r = np.sqrt((yy - 9.5) ** 2 + (xx - 9.5) ** 2)
        t[(r > 5) & (r < 9)] = 1.0
    elif label == 1:
        _stroke(t, 1, 19, 8, 12)
    elif label == 2:
        _stroke(t, 8, 12, 1, 19)
    elif label == 3:
        _stroke(t, 1, 19, 8, 12)
        _stroke(t, 8, 12, 1, 19)
    elif label == 4:
        t[np.abs(yy - xx) < 2] = 1.0
        t[np.abs(yy + xx - 19) < 2] = 1.0
    elif label == 5:
        _stroke(t, 1, 4, 1, 19)
        _stroke(t, 16, 19, 1, 19)
        _stroke(t, 1, 19, 1, 4)
        _stroke(t, 1, 19, 16, 19)
    elif label == 6:
        t[yy >= xx] = 1.0
    elif label == 7:
        _stroke(t, 1, 5, 1, 19)
        _stroke(t, 1, 19, 8, 12)
    elif label == 8:
        _stroke(t, 1, 19, 2, 6)
        _stroke(t, 1, 19, 14, 18)
    else:
        t[(yy // 5 + xx // 5) % 2 == 0] = 1.0
    return t


def make_glyph_set(
    n: int, seed: int, name: str = "glyphs", split: str = "train", balanced: bool = True
) -> LabeledImageSet:
    """Seeded 28x28 grayscale glyph dataset with translation/intensity jitter."""
    rng = np.random.default_rng(seed)
    if balanced:
        labels = np.arange(n, dtype=np.int64) % 10
        rng.shuffle(labels)
    else:
        labels = rng.integers(0, 10, size=n)
    images = np.zeros((n, 28, 28, 1), dtype=np.float32)
    for i in range(n):
        t = glyph_template(int(labels[i])) * rng.uniform(0.6, 1.0)
        dy, dx = rng.integers(0, 9, size=2)
        images[i, dy : dy + 20, dx : dx + 20, 0] = t
    noise = rng.uniform(0.0, 0.08, size=images.shape).astype(np.float32)
    return LabeledImageSet(
        images=np.clip(images + noise, 0.0, 1.0), labels=labels, name=name, split=split
    )


@pytest.fixture
def glyph_train():
    return make_glyph_set(96, seed=11)


@pytest.fixture
def glyph_test():
    return make_glyph_set(60, seed=12, split="test")
