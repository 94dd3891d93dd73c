"""The four loss families and the per-step report row.

Sign conventions: every function returns the quantity its owner *minimizes*.
`adversarial_losses` therefore returns the discriminator's descent loss
(the negated channel objective) next to the generator's non-saturating
surrogate. `LossReport` stores the channel objectives themselves, so
summing report fields reproduces the overall minimax objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DataError, NumericalError

LOGVAR_CLAMP = 20.0


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights: adversarial, reconstruction, prior, content."""

    lambda0: float = 1.0
    lambda1: float = 10.0
    lambda2: float = 0.01
    lambda3: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ConfigurationError(f"loss weight {f.name} must be nonnegative, got {v}")


@dataclass
class LossReport:
    """One training round's loss values.

    adv_st / adv_ts hold the channel adversarial objectives (what the
    discriminator ascends; negative around chance level), content_* the
    weighted pairwise-MSE terms, task the classifier cross-entropy.
    """

    step: int = 0
    lr: float = 0.0
    vae_total: float = 0.0
    vae_like: float = 0.0
    vae_prior: float = 0.0
    adv_st: float = 0.0
    adv_ts: float = 0.0
    content_st: float = 0.0
    content_ts: float = 0.0
    task: float = 0.0

    CSV_FIELDS = (
        "step",
        "lr",
        "vae_total",
        "vae_like",
        "vae_prior",
        "adv_st",
        "adv_ts",
        "content_st",
        "content_ts",
        "task",
    )

    def objective_total(self) -> float:
        """Value of the combined minimax objective this round."""
        return (
            self.vae_total
            + self.adv_st
            + self.adv_ts
            + self.content_st
            + self.content_ts
            + self.task
        )

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]

    def validate_finite(self) -> None:
        for f in self.CSV_FIELDS:
            if not math.isfinite(float(getattr(self, f))):
                raise NumericalError(f"loss report field {f} is non-finite at step {self.step}")


def _check_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericalError(f"non-finite values in {name}")


def kl_standard_normal(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mean, exp(logvar)) || N(0, I)), summed over latent
    dims and averaged over the batch."""
    logvar = torch.clamp(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    per_sample = 0.5 * (mean.pow(2) + logvar.exp() - logvar - 1.0).flatten(1).sum(dim=1)
    return per_sample.mean()


def vae_loss(
    x_s: torch.Tensor,
    x_t: torch.Tensor,
    recon_s: torch.Tensor,
    recon_t: torch.Tensor,
    lat_s,
    lat_t,
    w: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Both domains' codec loss; returns (total, likelihood part, prior part)."""
    _check_finite("vae_loss inputs", x_s, x_t, recon_s, recon_t, lat_s.mean, lat_t.mean)
    if x_s.shape != recon_s.shape or x_t.shape != recon_t.shape:
        raise ConfigurationError(
            f"reconstruction shapes {tuple(recon_s.shape)}/{tuple(recon_t.shape)} do not "
            f"match inputs {tuple(x_s.shape)}/{tuple(x_t.shape)}"
        )
    like = w.lambda1 * (F.mse_loss(recon_s, x_s) + F.mse_loss(recon_t, x_t))
    prior = w.lambda2 * (
        kl_standard_normal(lat_s.mean, lat_s.logvar) + kl_standard_normal(lat_t.mean, lat_t.logvar)
    )
    return like + prior, like, prior


def adversarial_losses(
    real_assoc: torch.Tensor,
    fake_assoc: torch.Tensor,
    heads,
    channel,
    w: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, torch.Tensor]:
    """One channel's GAN losses.

    real_assoc are source associations (the real player), fake_assoc the
    generated target associations. Returns (disc_loss, gen_loss): the
    discriminator minimizes disc_loss (equivalently ascends the channel
    objective), the generator minimizes the non-saturating gen_loss. Both
    are computed in the log-sigmoid domain.
    """
    _check_finite(f"adversarial_losses({channel.code}) inputs", real_assoc, fake_assoc)
    disc = heads.discriminator_for(channel)
    real_logit, _, _ = disc(real_assoc)
    fake_logit, _, _ = disc(fake_assoc)
    ones = torch.ones_like(real_logit)
    zeros = torch.zeros_like(fake_logit)
    disc_loss = w.lambda0 * (
        F.binary_cross_entropy_with_logits(real_logit, ones)
        + F.binary_cross_entropy_with_logits(fake_logit, zeros)
    )
    gen_loss = w.lambda0 * F.binary_cross_entropy_with_logits(fake_logit, ones)
    return disc_loss, gen_loss


def content_loss(
    real_assoc: torch.Tensor,
    fake_assoc: torch.Tensor,
    mask: torch.Tensor | None = None,
    w: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Masked pairwise mean squared error between paired associations.

    Subtracting the squared mean difference makes the penalty insensitive
    to uniform intensity offsets. k counts the per-image elements the mask
    spans. Returns the lambda3-weighted per-channel term.
    """
    _check_finite("content_loss inputs", real_assoc, fake_assoc)
    if real_assoc.shape != fake_assoc.shape:
        raise ConfigurationError(
            f"content_loss shapes differ: {tuple(real_assoc.shape)} vs {tuple(fake_assoc.shape)}"
        )
    diff = real_assoc - fake_assoc
    if mask is None:
        mask = torch.ones_like(diff[0])
    mask = mask.to(diff.dtype).expand(diff.shape[1:])
    k = mask.numel()
    if k == 0:
        raise ConfigurationError("content_loss mask spans zero elements")
    masked = (diff * mask).flatten(1)
    per_sample = masked.pow(2).sum(dim=1) / k - masked.sum(dim=1).pow(2) / (k * k)
    return w.lambda3 * per_sample.mean()


def task_loss(
    class_logits_st: torch.Tensor,
    class_logits_ts: torch.Tensor,
    labels: torch.Tensor,
) -> torch.Tensor:
    """Soft-max cross-entropy on both channels' class heads, summed."""
    if labels.numel() and (labels.min() < 0 or labels.max() >= class_logits_st.shape[1]):
        raise DataError(
            f"labels must lie in [0, {class_logits_st.shape[1]}), "
            f"got range [{int(labels.min())}, {int(labels.max())}]"
        )
    _check_finite("task_loss logits", class_logits_st, class_logits_ts)
    return F.cross_entropy(class_logits_st, labels) + F.cross_entropy(class_logits_ts, labels)
