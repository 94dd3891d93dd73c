"""Three-phase alternating optimization.

Each round runs, on one (source, target) batch pair:

  1. codec step      — updates both encoders and both decoders against the
                       reconstruction + prior loss;
  2. critic step     — updates the two discriminators (and their class
                       heads) against the adversarial and task losses;
  3. alignment step  — updates the encoders and the two generators against
                       the non-saturating adversarial surrogate plus, when
                       enabled, the content-constancy penalty.

Networks a phase declares fixed are frozen (requires_grad off) and run in
inference mode, so neither their parameters nor their norm statistics move.
All sampling flows through explicit generators owned by TrainState, which
makes runs reproducible and resumable.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import persistence
from .config import ExperimentConfig, save_config
from .datasets import LabeledImageSet, load_dataset, preprocess_images
from .errors import ConfigurationError, DataError, NumericalError
from .losses import LossReport, adversarial_losses, content_loss, task_loss, vae_loss
from .networks import (
    CHANNELS,
    CHANNEL_ST,
    CHANNEL_TS,
    build_model,
    decode,
    discriminate,
    encode,
    generate,
    graft,
    parameter_groups,
)

log = logging.getLogger(__name__)

PHASES = ("vae", "disc", "gen")

# parameter groups each phase must leave untouched
FROZEN_GROUPS = {
    "vae": ("generator_1", "generator_2", "discriminator_1", "discriminator_2"),
    "disc": (
        "encoder_low_s",
        "encoder_low_t",
        "encoder_shared",
        "decoder_s",
        "decoder_t",
        "generator_1",
        "generator_2",
    ),
    "gen": ("decoder_s", "decoder_t", "discriminator_1", "discriminator_2"),
}

# sub-stream tags for deriving independent RNG streams from the run seed
_NOISE_STREAM = 11
_SAMPLER_STREAM = 12
_SEMI_STREAM = 13


def lr_schedule(step: int, config: ExperimentConfig) -> float:
    """Stepwise exponential decay: lr0 * decay^floor(step / decay_every)."""
    if step < 0:
        raise ConfigurationError(f"step must be nonnegative, got {step}")
    return config.lr0 * config.decay ** (step // config.decay_every)


@dataclass
class DomainData:
    """Training-side view of a scenario: labeled source, unlabeled target.

    Target labels are stripped here; only the optional semi-supervised pool
    (drawn per class before stripping) retains them.
    """

    source_images: np.ndarray
    source_labels: np.ndarray
    target_images: np.ndarray
    extra_images: np.ndarray | None = None
    extra_labels: np.ndarray | None = None

    @classmethod
    def from_sets(
        cls,
        source_train: LabeledImageSet,
        target_train: LabeledImageSet,
        config: ExperimentConfig,
    ) -> "DomainData":
        extra_images = extra_labels = None
        per_class = config.semi_supervised_target_count
        if per_class > 0:
            rng = np.random.default_rng((config.seed, _SEMI_STREAM))
            picks = []
            for c in range(10):
                pool = np.flatnonzero(target_train.labels == c)
                if pool.size == 0:
                    raise DataError(f"semi-supervised selection: target has no samples of class {c}")
                take = min(per_class, pool.size)
                picks.append(rng.choice(pool, size=take, replace=False))
            picks = np.concatenate(picks)
            extra_images = target_train.images[picks]
            extra_labels = target_train.labels[picks]
        return cls(
            source_images=source_train.images,
            source_labels=source_train.labels,
            target_images=target_train.images,
            extra_images=extra_images,
            extra_labels=extra_labels,
        )


def load_domain_data(config: ExperimentConfig) -> DomainData:
    source = load_dataset(config.source, "train", config.data_root)
    target = load_dataset(config.target, "train", config.data_root)
    return DomainData.from_sets(source, target, config)


def to_model_batch(images: np.ndarray) -> torch.Tensor:
    """[0, 1] NHWC numpy batch -> preprocessed [-1, 1] NCHW float tensor."""
    arr = preprocess_images(images, target_channels=3)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def _load_mask(config: ExperimentConfig) -> torch.Tensor | None:
    if config.mask_path is None:
        return None
    try:
        mask = np.load(config.mask_path)
    except OSError as e:
        raise ConfigurationError(f"cannot read mask file {config.mask_path}: {e}") from e
    return torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))


class TrainState:
    """All mutable training state: parameters, optimizer moments, RNG streams."""

    def __init__(self, config, vae, heads, optimizers, noise_generator, sampler, step=0,
                 freeze_decoders=False):
        self.config = config
        self.vae = vae
        self.heads = heads
        self.optimizers = optimizers
        self.noise_generator = noise_generator
        self.sampler = sampler
        self.step = step
        self.freeze_decoders = freeze_decoders
        self.mask = _load_mask(config)
        self.groups = parameter_groups(vae, heads)
        self.group_modules = {
            "encoder_low_s": vae.encoder_low_s,
            "encoder_low_t": vae.encoder_low_t,
            "encoder_shared": vae.encoder_high_shared,
            "decoder_s": vae.decoder_s,
            "decoder_t": vae.decoder_t,
            "generator_1": heads.generator_1,
            "generator_2": heads.generator_2,
            "discriminator_1": heads.discriminator_1,
            "discriminator_2": heads.discriminator_2,
        }
        self.phase_params = {
            "vae": self._collect("encoder_low_s", "encoder_low_t", "encoder_shared")
            + ([] if freeze_decoders else self._collect("decoder_s", "decoder_t")),
            "disc": self._collect("discriminator_1", "discriminator_2"),
            "gen": self._collect(
                "encoder_low_s", "encoder_low_t", "encoder_shared", "generator_1", "generator_2"
            ),
        }

    def _collect(self, *names):
        out = []
        for n in names:
            out.extend(self.groups[n])
        return out

    @classmethod
    def create(cls, config: ExperimentConfig, freeze_decoders: bool = False) -> "TrainState":
        if config.deterministic:
            torch.use_deterministic_algorithms(True)
        vae, heads = build_model(config)
        noise_seed = int(np.random.SeedSequence((config.seed, _NOISE_STREAM)).generate_state(1)[0])
        noise_generator = torch.Generator().manual_seed(noise_seed)
        sampler = np.random.default_rng((config.seed, _SAMPLER_STREAM))
        state = cls(config, vae, heads, {}, noise_generator, sampler,
                    freeze_decoders=freeze_decoders)
        state.optimizers = {
            phase: torch.optim.Adam(
                [p for _, p in state.phase_params[phase]],
                lr=config.lr0,
                betas=(config.adam_beta1, config.adam_beta2),
                eps=config.adam_eps,
            )
            for phase in PHASES
        }
        return state

    def frozen_groups(self, phase: str) -> tuple[str, ...]:
        names = FROZEN_GROUPS[phase]
        if self.freeze_decoders and phase == "vae":
            names = names + ("decoder_s", "decoder_t")
        return names

    def group_hashes(self, names) -> dict[str, str]:
        out = {}
        for n in names:
            h = hashlib.sha256()
            sd = self.group_modules[n].state_dict()
            for key in sorted(sd):
                h.update(sd[key].detach().cpu().numpy().tobytes())
            out[n] = h.hexdigest()
        return out

    # --- serialization -------------------------------------------------

    def to_contents(self) -> persistence.CheckpointContents:
        tensors: dict[str, np.ndarray] = {}
        for k, v in self.vae.state_dict().items():
            tensors[f"model/vae.{k}"] = v.detach().cpu().numpy()
        for k, v in self.heads.state_dict().items():
            tensors[f"model/heads.{k}"] = v.detach().cpu().numpy()
        for phase, opt in self.optimizers.items():
            names = [n for n, _ in self.phase_params[phase]]
            opt_state = opt.state_dict()["state"]
            for i, name in enumerate(names):
                st = opt_state.get(i)
                if st is None:
                    continue
                for slot in ("exp_avg", "exp_avg_sq"):
                    tensors[f"opt/{phase}/{name}/{slot}"] = st[slot].detach().cpu().numpy()
                step_val = st["step"]
                step_arr = (
                    step_val.detach().cpu().numpy()
                    if isinstance(step_val, torch.Tensor)
                    else np.asarray(float(step_val), dtype=np.float32)
                )
                tensors[f"opt/{phase}/{name}/step"] = step_arr
        tensors["rng/torch_noise"] = self.noise_generator.get_state().numpy()
        meta = {
            "numpy_sampler": self.sampler.bit_generator.state,
            "freeze_decoders": self.freeze_decoders,
        }
        return persistence.CheckpointContents(
            config=self.config.to_dict(), step=self.step, tensors=tensors, meta=meta
        )

    @classmethod
    def from_contents(cls, contents: persistence.CheckpointContents) -> "TrainState":
        config = ExperimentConfig.from_dict(contents.config)
        state = cls.create(config, freeze_decoders=bool(contents.meta.get("freeze_decoders")))
        tensors = contents.tensors

        def module_sd(prefix):
            sd = {}
            for name, arr in tensors.items():
                if name.startswith(prefix):
                    sd[name[len(prefix):]] = torch.from_numpy(arr.copy())
            return sd

        try:
            state.vae.load_state_dict(module_sd("model/vae."), strict=True)
            state.heads.load_state_dict(module_sd("model/heads."), strict=True)
        except RuntimeError as e:
            raise ConfigurationError(f"checkpoint parameters do not fit the architecture: {e}") from e

        for phase, opt in state.optimizers.items():
            names = [n for n, _ in state.phase_params[phase]]
            restored = {}
            for i, name in enumerate(names):
                key = f"opt/{phase}/{name}/exp_avg"
                if key not in tensors:
                    continue
                restored[i] = {
                    "step": torch.from_numpy(tensors[f"opt/{phase}/{name}/step"].copy()),
                    "exp_avg": torch.from_numpy(tensors[key].copy()),
                    "exp_avg_sq": torch.from_numpy(tensors[f"opt/{phase}/{name}/exp_avg_sq"].copy()),
                }
            if restored:
                sd = opt.state_dict()
                sd["state"] = restored
                opt.load_state_dict(sd)

        state.noise_generator.set_state(torch.from_numpy(tensors["rng/torch_noise"].copy()))
        state.sampler.bit_generator.state = contents.meta["numpy_sampler"]
        state.step = contents.step
        return state


@contextmanager
def _frozen(*modules):
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, r in zip(params, saved):
            p.requires_grad_(r)


def _ensure_finite(loss: torch.Tensor, state: TrainState, phase: str) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite {phase} loss at step {state.step}")


def _set_phase_lr(state: TrainState, lr: float) -> None:
    for opt in state.optimizers.values():
        for group in opt.param_groups:
            group["lr"] = lr


def step_vae(state: TrainState, batch_s: torch.Tensor, batch_t: torch.Tensor) -> LossReport:
    """Codec update: encoders + decoders against the reconstruction/prior loss."""
    vae, heads, cfg = state.vae, state.heads, state.config
    vae.train()
    heads.eval()
    if state.freeze_decoders:
        vae.decoder_s.eval()
        vae.decoder_t.eval()
    gen = state.noise_generator
    frozen = (
        [vae.decoder_s, vae.decoder_t, heads] if state.freeze_decoders else [heads]
    )
    with _frozen(*frozen):
        lat_s = encode(vae, batch_s, "s", generator=gen)
        lat_t = encode(vae, batch_t, "t", generator=gen)
        recon_s = decode(vae, lat_s, "s")
        recon_t = decode(vae, lat_t, "t")
        total, like, prior = vae_loss(batch_s, batch_t, recon_s, recon_t, lat_s, lat_t, cfg.weights)
        _ensure_finite(total, state, "vae")
        opt = state.optimizers["vae"]
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
    return LossReport(
        step=state.step,
        vae_total=total.item(),
        vae_like=like.item(),
        vae_prior=prior.item(),
    )


def _associations(state: TrainState, lat, channel, with_generator: bool):
    """Graft one latent batch through a channel, optionally through its generator."""
    assoc = graft(
        state.vae,
        lat,
        channel,
        noise_sigma=state.config.graft_noise_sigma,
        generator=state.noise_generator,
    )
    if with_generator:
        return generate(state.heads, assoc, channel)
    return assoc


def step_discriminator(
    state: TrainState,
    batch_s: torch.Tensor,
    labels_s: torch.Tensor,
    batch_t: torch.Tensor,
    extra: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> LossReport:
    """Critic update: discriminators ascend the channel objectives while the
    class heads fit the source-association labels (plus any semi-supervised
    target associations)."""
    vae, heads, cfg = state.vae, state.heads, state.config
    vae.eval()
    heads.generator_1.eval()
    heads.generator_2.eval()
    heads.discriminator_1.train()
    heads.discriminator_2.train()
    gen = state.noise_generator

    with torch.no_grad():
        lat_s = encode(vae, batch_s, "s", generator=gen)
        lat_t = encode(vae, batch_t, "t", generator=gen)
        real = {}
        fake = {}
        for ch in CHANNELS:
            real[ch.code] = _associations(state, lat_s, ch, with_generator=False)
            fake[ch.code] = _associations(state, lat_t, ch, with_generator=True)
        extra_assoc = None
        if extra is not None:
            x_lab, y_lab = extra
            lat_lab = encode(vae, x_lab, "t", generator=gen)
            extra_assoc = {
                ch.code: _associations(state, lat_lab, ch, with_generator=True) for ch in CHANNELS
            }

    with _frozen(vae, heads.generator_1, heads.generator_2):
        disc_losses = {}
        for ch in CHANNELS:
            disc_losses[ch.code], _ = adversarial_losses(
                real[ch.code], fake[ch.code], heads, ch, cfg.weights
            )
        _, logits_st = discriminate(heads, real["st"], CHANNEL_ST)
        _, logits_ts = discriminate(heads, real["ts"], CHANNEL_TS)
        t_loss = task_loss(logits_st, logits_ts, labels_s)
        if extra_assoc is not None:
            _, extra_st = discriminate(heads, extra_assoc["st"], CHANNEL_ST)
            _, extra_ts = discriminate(heads, extra_assoc["ts"], CHANNEL_TS)
            t_loss = t_loss + task_loss(extra_st, extra_ts, extra[1])
        total = disc_losses["st"] + disc_losses["ts"] + t_loss
        _ensure_finite(total, state, "disc")
        opt = state.optimizers["disc"]
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()

    return LossReport(
        step=state.step,
        adv_st=-disc_losses["st"].item(),
        adv_ts=-disc_losses["ts"].item(),
        task=t_loss.item(),
    )


def step_generator(state: TrainState, batch_s: torch.Tensor, batch_t: torch.Tensor) -> LossReport:
    """Alignment update: encoders + generators descend the non-saturating
    surrogate (+ content constancy); grafted stacks and critics stay fixed."""
    vae, heads, cfg = state.vae, state.heads, state.config
    vae.train()
    vae.decoder_s.eval()
    vae.decoder_t.eval()
    heads.generator_1.train()
    heads.generator_2.train()
    heads.discriminator_1.eval()
    heads.discriminator_2.eval()
    gen = state.noise_generator

    content_parts = {"st": 0.0, "ts": 0.0}
    with _frozen(vae.decoder_s, vae.decoder_t, heads.discriminator_1, heads.discriminator_2):
        lat_s = encode(vae, batch_s, "s", generator=gen)
        lat_t = encode(vae, batch_t, "t", generator=gen)
        total = None
        for ch in CHANNELS:
            real_assoc = _associations(state, lat_s, ch, with_generator=False)
            fake_assoc = _associations(state, lat_t, ch, with_generator=True)
            _, gen_loss = adversarial_losses(real_assoc, fake_assoc, heads, ch, cfg.weights)
            term = gen_loss
            if cfg.content_constancy:
                c = content_loss(real_assoc, fake_assoc, state.mask, cfg.weights)
                content_parts[ch.code] = c.item()
                term = term + c
            total = term if total is None else total + term
        _ensure_finite(total, state, "gen")
        opt = state.optimizers["gen"]
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()

    return LossReport(
        step=state.step,
        content_st=content_parts["st"],
        content_ts=content_parts["ts"],
    )


def _draw(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.choice(n, size=k, replace=n < k)


def sample_round_batches(state: TrainState, data: DomainData):
    """Draw one round's batches from the run's sampling stream."""
    cfg = state.config
    rng = state.sampler
    idx_s = _draw(rng, data.source_images.shape[0], cfg.batch_size)
    idx_t = _draw(rng, data.target_images.shape[0], cfg.batch_size)
    x_s = to_model_batch(data.source_images[idx_s])
    y_s = torch.from_numpy(data.source_labels[idx_s])
    x_t = to_model_batch(data.target_images[idx_t])
    extra = None
    if data.extra_images is not None:
        k = min(cfg.batch_size, data.extra_images.shape[0])
        idx_e = _draw(rng, data.extra_images.shape[0], k)
        extra = (to_model_batch(data.extra_images[idx_e]), torch.from_numpy(data.extra_labels[idx_e]))
    return x_s, y_s, x_t, extra


def _merge_reports(step, lr, r_vae, r_disc, r_gen) -> LossReport:
    return LossReport(
        step=step,
        lr=lr,
        vae_total=r_vae.vae_total,
        vae_like=r_vae.vae_like,
        vae_prior=r_vae.vae_prior,
        adv_st=r_disc.adv_st,
        adv_ts=r_disc.adv_ts,
        content_st=r_gen.content_st,
        content_ts=r_gen.content_ts,
        task=r_disc.task,
    )


def _check_frozen(state: TrainState, phase: str, before: dict[str, str]) -> None:
    after = state.group_hashes(before.keys())
    changed = [k for k in before if before[k] != after[k]]
    if changed:
        raise AssertionError(f"phase {phase} modified frozen parameter groups: {changed}")


def train_round(state: TrainState, x_s, y_s, x_t, extra=None) -> LossReport:
    """One full round: codec step, critic step, alignment step."""
    lr = lr_schedule(state.step, state.config)
    _set_phase_lr(state, lr)
    debug = state.config.debug_checks

    phase_fns = (
        ("vae", lambda: step_vae(state, x_s, x_t)),
        ("disc", lambda: step_discriminator(state, x_s, y_s, x_t, extra)),
        ("gen", lambda: step_generator(state, x_s, x_t)),
    )
    results = {}
    for phase, fn in phase_fns:
        before = state.group_hashes(state.frozen_groups(phase)) if debug else None
        results[phase] = fn()
        if debug:
            _check_frozen(state, phase, before)

    report = _merge_reports(state.step, lr, results["vae"], results["disc"], results["gen"])
    report.validate_finite()
    state.step += 1
    return report


class TrainingLog:
    """CSV sink for per-round loss reports."""

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        exists = self.path.exists()
        self._file = open(self.path, "a" if append else "w", newline="")
        self._writer = csv.writer(self._file)
        if not (append and exists):
            self._writer.writerow(LossReport.CSV_FIELDS)

    def write(self, report: LossReport) -> None:
        self._writer.writerow(report.csv_row())

    def close(self) -> None:
        self._file.flush()
        self._file.close()


def run_training(
    config: ExperimentConfig,
    data: DomainData | None = None,
    state: TrainState | None = None,
    resume_from: str | Path | None = None,
) -> tuple[TrainState, list[LossReport]]:
    """Drive the full schedule; writes the CSV log and periodic checkpoints.

    Returns the final state and all per-round reports. A non-finite loss
    aborts the run after dumping a diagnostic checkpoint.
    """
    out = Path(config.out_dir)
    ckpt_dir = out / "checkpoints"
    if state is None:
        if resume_from is not None:
            state = persistence.load_checkpoint(resume_from, expected_config=config)
        else:
            state = TrainState.create(config)
    if data is None:
        data = load_domain_data(config)
    save_config(config, out / "config.yaml")
    log_file = TrainingLog(out / "train_log.csv", append=state.step > 0)

    reports: list[LossReport] = []
    try:
        while state.step < config.total_steps:
            batches = sample_round_batches(state, data)
            try:
                report = train_round(state, *batches)
            except NumericalError:
                diag = ckpt_dir / f"diagnostic_step_{state.step}.ckpt"
                persistence.save_checkpoint(state, diag)
                log.error("aborting: non-finite loss; diagnostic checkpoint at %s", diag)
                raise
            reports.append(report)
            if report.step % config.log_every == 0:
                log_file.write(report)
            if state.step % config.checkpoint_every == 0 and state.step < config.total_steps:
                persistence.save_checkpoint(state, ckpt_dir / f"step_{state.step}.ckpt")
            if report.step % 100 == 0:
                log.info(
                    "step %d lr %.2e vae %.4f adv(st/ts) %.3f/%.3f task %.3f",
                    report.step,
                    report.lr,
                    report.vae_total,
                    report.adv_st,
                    report.adv_ts,
                    report.task,
                )
    finally:
        log_file.close()
    persistence.save_checkpoint(state, ckpt_dir / "final.ckpt")
    return state, reports
