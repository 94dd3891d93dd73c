"""Measurements over trained checkpoints: target accuracy, baselines, the
stack-split sweep, cross-task transfer, and the image/feature exports.

Evaluation is read-only and deterministic: encodings use the posterior mean
(zero reparameterization noise) so repeated calls agree exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import persistence
from .config import ExperimentConfig
from .datasets import LabeledImageSet, load_dataset, preprocess_images
from .errors import ConfigurationError
from .networks import (
    CHANNELS,
    Discriminator,
    GraftChannel,
    StackSplit,
    discriminate,
    encode,
    generate,
    graft,
    init_parameters,
)
from .training import (
    DomainData,
    TrainState,
    lr_schedule,
    run_training,
    to_model_batch,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 256
_ZERO_NOISE = torch.zeros(())


@dataclass
class EvalReport:
    """One accuracy measurement."""

    scenario: str
    channel: str
    accuracy: float
    n_test: int
    checkpoint_step: int

    CSV_FIELDS = ("scenario", "channel", "accuracy", "n_test", "checkpoint_step")

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def append_report(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(EvalReport.CSV_FIELDS)
        w.writerow(report.csv_row())


def _resolve_state(checkpoint) -> TrainState:
    if isinstance(checkpoint, TrainState):
        return checkpoint
    return persistence.load_checkpoint(checkpoint)


def _target_class_logits(state: TrainState, x: torch.Tensor, channel: GraftChannel) -> torch.Tensor:
    """Test-time pipeline for target images: encode -> graft -> generate -> classify."""
    lat = encode(state.vae, x, "t", noise=_ZERO_NOISE)
    assoc = graft(state.vae, lat, channel)
    aligned = generate(state.heads, assoc, channel)
    _, logits = discriminate(state.heads, aligned, channel)
    return logits


def _predict(state: TrainState, x: torch.Tensor, channel: str) -> torch.Tensor:
    if channel == "combined":
        probs = None
        for ch in CHANNELS:
            p = torch.softmax(_target_class_logits(state, x, ch), dim=1)
            probs = p if probs is None else probs + p
        return probs.argmax(dim=1)
    return _target_class_logits(state, x, GraftChannel.parse(channel)).argmax(dim=1)


def evaluate_accuracy(
    checkpoint,
    target_test: LabeledImageSet,
    channel: str = "st",
    batch_size: int = EVAL_BATCH,
) -> EvalReport:
    """Accuracy of the adapted classifier on held-out target data.

    `channel` is "st", "ts", or "combined" (averaged soft-max of both
    channels; reported separately, never substituted for the per-channel
    numbers)."""
    state = _resolve_state(checkpoint)
    if channel not in ("st", "ts", "combined"):
        raise ConfigurationError(f"unknown eval channel {channel!r}")
    state.vae.eval()
    state.heads.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, target_test.count, batch_size):
            stop = min(start + batch_size, target_test.count)
            x = to_model_batch(target_test.images[start:stop])
            pred = _predict(state, x, channel)
            labels = torch.from_numpy(target_test.labels[start:stop])
            correct += int((pred == labels).sum())
    return EvalReport(
        scenario=state.config.scenario_label,
        channel=channel,
        accuracy=correct / target_test.count,
        n_test=target_test.count,
        checkpoint_step=state.step,
    )


def evaluate_source_only(
    config: ExperimentConfig,
    train_set: LabeledImageSet | None = None,
    test_set: LabeledImageSet | None = None,
    train_on: str = "source",
) -> EvalReport:
    """No-adaptation baseline: fit the classifier trunk on raw images.

    train_on="source" gives the lower bound; train_on="target" (labels
    allowed: this is an evaluation-side baseline) gives the upper bound.
    The target test split is always the yardstick.
    """
    if train_on not in ("source", "target"):
        raise ConfigurationError(f"train_on must be 'source' or 'target', got {train_on!r}")
    train_name = config.source if train_on == "source" else config.target
    if train_set is None:
        train_set = load_dataset(train_name, "train", config.data_root)
    if test_set is None:
        test_set = load_dataset(config.target, "test", config.data_root)

    torch_gen = torch.Generator().manual_seed(config.seed)
    net = Discriminator(tuple(config.disc_filters), config.feature_dim)
    init_parameters(net, torch_gen)
    opt = torch.optim.Adam(
        net.parameters(),
        lr=config.lr0,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    rng = np.random.default_rng((config.seed, 21))
    net.train()
    for step in range(config.total_steps):
        for group in opt.param_groups:
            group["lr"] = lr_schedule(step, config)
        idx = rng.choice(train_set.count, size=min(config.batch_size, train_set.count),
                         replace=train_set.count < config.batch_size)
        x = to_model_batch(train_set.images[idx])
        y = torch.from_numpy(train_set.labels[idx])
        _, logits, _ = net(x)
        loss = torch.nn.functional.cross_entropy(logits, y)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    net.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, test_set.count, EVAL_BATCH):
            stop = min(start + EVAL_BATCH, test_set.count)
            x = to_model_batch(test_set.images[start:stop])
            _, logits, _ = net(x)
            correct += int((logits.argmax(dim=1) == torch.from_numpy(test_set.labels[start:stop])).sum())
    return EvalReport(
        scenario=config.scenario_label,
        channel=f"{train_on}-only",
        accuracy=correct / test_set.count,
        n_test=test_set.count,
        checkpoint_step=config.total_steps,
    )


def sweep_cgrs(
    config: ExperimentConfig,
    splits: list[StackSplit],
    budget: float = 0.2,
    data: DomainData | None = None,
    target_test: LabeledImageSet | None = None,
) -> list[dict]:
    """Train one model per stack split (at a fraction of the full budget)
    and report both channels. Per-split failures are recorded, not raised."""
    if not (0.0 < budget <= 1.0):
        raise ConfigurationError(f"sweep budget must lie in (0, 1], got {budget}")
    steps = max(1, int(config.total_steps * budget))
    if target_test is None:
        target_test = load_dataset(config.target, "test", config.data_root)
    rows = []
    for split in splits:
        sub = replace(
            config,
            split=split,
            total_steps=steps,
            out_dir=str(Path(config.out_dir) / f"sweep_{split.label}"),
        )
        row = {"split": split.label, "budget_steps": steps, "st": None, "ts": None, "error": None}
        try:
            state, _ = run_training(sub, data=data)
            for ch in ("st", "ts"):
                row[ch] = evaluate_accuracy(state, target_test, ch).accuracy
        except Exception as e:  # keep sweeping; the row records the failure
            log.exception("sweep split %s failed", split.label)
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)
    return rows


def transfer_cgrs(
    source_checkpoint,
    new_config: ExperimentConfig,
    data: DomainData | None = None,
    target_test: LabeledImageSet | None = None,
) -> dict[str, EvalReport]:
    """Reuse trained grafted stacks on a new scenario.

    Starts from the full pretrained weights, freezes both decoder stacks,
    and retrains all three phases on the new scenario with the decoders
    excluded from every update set. Returns per-channel reports.
    """
    donor = _resolve_state(source_checkpoint)
    saved = donor.config.to_dict()
    expected = new_config.to_dict()
    mismatched = [
        f
        for f in persistence.ARCHITECTURE_FIELDS
        if f not in ("source", "target") and saved.get(f) != expected.get(f)
    ]
    if mismatched:
        raise ConfigurationError(
            f"transfer requires matching architectures; differing fields: {mismatched}"
        )

    state = TrainState.create(new_config, freeze_decoders=True)
    state.vae.load_state_dict(donor.vae.state_dict())
    state.heads.load_state_dict(donor.heads.state_dict())
    state, _ = run_training(new_config, data=data, state=state)
    if target_test is None:
        target_test = load_dataset(new_config.target, "test", new_config.data_root)
    return {ch: evaluate_accuracy(state, target_test, ch) for ch in ("st", "ts")}


def _to_display(grid: np.ndarray) -> np.ndarray:
    """Map [-1, 1] image values onto [0, 255] (affine: -1 -> 0, +1 -> 255)."""
    return np.clip(np.rint((grid + 1.0) * 127.5), 0, 255).astype(np.uint8)


def export_associations(checkpoint, batch_s: np.ndarray, batch_t: np.ndarray, path) -> dict[str, Path]:
    """Write one lossless grid per channel.

    Inputs are preprocessed NHWC batches in [-1, 1] of equal size. Columns:
    source image, source association, generated target association, target
    association, target image; one row per sample.
    """
    state = _resolve_state(checkpoint)
    if batch_s.shape != batch_t.shape:
        raise ConfigurationError(
            f"source and target batches must match, got {batch_s.shape} vs {batch_t.shape}"
        )
    state.vae.eval()
    state.heads.eval()
    x_s = torch.from_numpy(np.ascontiguousarray(batch_s, dtype=np.float32)).permute(0, 3, 1, 2)
    x_t = torch.from_numpy(np.ascontiguousarray(batch_t, dtype=np.float32)).permute(0, 3, 1, 2)
    path = Path(path)
    stem = path.with_suffix("") if path.suffix else path
    out = {}
    with torch.no_grad():
        lat_s = encode(state.vae, x_s, "s", noise=_ZERO_NOISE)
        lat_t = encode(state.vae, x_t, "t", noise=_ZERO_NOISE)
        for ch in CHANNELS:
            assoc_s = graft(state.vae, lat_s, ch)
            assoc_t = graft(state.vae, lat_t, ch)
            aligned_t = generate(state.heads, assoc_t, ch)
            cols = [x_s, assoc_s, aligned_t, assoc_t, x_t]
            cells = [c.permute(0, 2, 3, 1).numpy() for c in cols]
            rows = [np.concatenate([cell[i] for cell in cells], axis=1) for i in range(len(batch_s))]
            grid = _to_display(np.concatenate(rows, axis=0))
            target = stem.parent / f"{stem.name}_{ch.code}.png"
            target.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(grid).save(target, format="PNG")
            out[ch.code] = target
    return out


def export_features(checkpoint, batches, path, channel: str = "st") -> Path:
    """Write per-sample penultimate discriminator activations as TSV.

    `batches` yields (images NHWC in [-1, 1], labels, domain) with domain
    0 = source, 1 = target. Source images go through their association;
    target images additionally through the channel generator, mirroring the
    test-time pipeline.
    """
    state = _resolve_state(checkpoint)
    ch = GraftChannel.parse(channel)
    state.vae.eval()
    state.heads.eval()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    disc = state.heads.discriminator_for(ch)
    with open(path, "w") as f, torch.no_grad():
        header = ["domain", "label"] + [f"f{i}" for i in range(disc.feature_dim)]
        f.write("\t".join(header) + "\n")
        for images, labels, domain in batches:
            if domain not in (0, 1):
                raise ConfigurationError(f"domain must be 0 (source) or 1 (target), got {domain}")
            x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
            lat = encode(state.vae, x, "s" if domain == 0 else "t", noise=_ZERO_NOISE)
            assoc = graft(state.vae, lat, ch)
            if domain == 1:
                assoc = generate(state.heads, assoc, ch)
            _, _, feats = disc(assoc)
            feats = feats.numpy()
            for i in range(feats.shape[0]):
                row = [str(domain), str(int(labels[i]))] + [f"{v:.6g}" for v in feats[i]]
                f.write("\t".join(row) + "\n")
    return path
