"""Network definitions: coupled VAEs, cross-grafted decoder stacks, and the
adversarial alignment heads.

Layout conventions: images are NCHW tensors in [-1, 1]; latent codes are
spatial (batch, latent_channels, 4, 4) maps whose flattened size is the
configured latent dimensionality. The two domains are tagged "s" (source)
and "t" (target) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
from torch import nn

from .errors import ConfigurationError, ContractViolation

if TYPE_CHECKING:
    from .config import ExperimentConfig

DOMAINS = ("s", "t")
DECODER_DEPTH = 6
ENCODER_DEPTH = 4
SHARED_ENCODER_LAYERS = 2  # top half of the encoder is one parameter set for both domains
IMAGE_SIZE = 28
NUM_CLASSES = 10
LATENT_SPATIAL = 4
LEAKY_SLOPE = 0.2

# spatial schedule: encoder 28 -> 14 -> 7 -> 4 (stride 2,2,2,1),
# decoder 4 -> 4 -> 7 -> 14 -> 28 -> 28 -> 28
_DEC_SPATIAL = (4, 4, 7, 14, 28, 28, 28)
ENC_STRIDES = (2, 2, 2, 1)


@dataclass(frozen=True)
class StackSplit:
    """How the 6 decoder layers divide into a high-level and a low-level stack."""

    n_high: int
    n_low: int

    def __post_init__(self):
        if self.n_high < 0 or self.n_low < 0 or self.n_high + self.n_low != DECODER_DEPTH:
            raise ConfigurationError(
                f"stack split must satisfy n_high + n_low = {DECODER_DEPTH} with both "
                f"nonnegative, got H{self.n_high}L{self.n_low}"
            )

    @property
    def label(self) -> str:
        return f"H{self.n_high}L{self.n_low}"

    @classmethod
    def parse(cls, text: str) -> "StackSplit":
        t = text.strip().upper()
        if not (t.startswith("H") and "L" in t):
            raise ConfigurationError(f"cannot parse stack split {text!r}; expected e.g. H4L2")
        try:
            h, low = t[1:].split("L")
            return cls(int(h), int(low))
        except ValueError as e:
            raise ConfigurationError(f"cannot parse stack split {text!r}: {e}") from e


@dataclass(frozen=True)
class GraftChannel:
    """One graft direction: which domain supplies the high and the low stack."""

    high_domain: str
    low_domain: str

    def __post_init__(self):
        if self.high_domain not in DOMAINS or self.low_domain not in DOMAINS:
            raise ConfigurationError(f"graft domains must be in {DOMAINS}")
        if self.high_domain == self.low_domain:
            raise ConfigurationError("graft channel must cross domains")

    @property
    def code(self) -> str:
        return self.high_domain + self.low_domain

    @classmethod
    def parse(cls, text: str) -> "GraftChannel":
        t = text.strip().lower()
        if t == "st":
            return CHANNEL_ST
        if t == "ts":
            return CHANNEL_TS
        raise ConfigurationError(f"unknown channel {text!r}; expected 'st' or 'ts'")


CHANNEL_ST = GraftChannel("s", "t")
CHANNEL_TS = GraftChannel("t", "s")
CHANNELS = (CHANNEL_ST, CHANNEL_TS)


@dataclass
class LatentBatch:
    """Posterior mean/log-variance and the reparameterized sample."""

    mean: torch.Tensor
    logvar: torch.Tensor
    sample: torch.Tensor


class EncoderBlock(nn.Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride, padding=kernel // 2)
        self.bn = nn.BatchNorm2d(cout)
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class SharedEncoderTop(nn.Module):
    """High-level encoder layers plus the 1x1 mean/logvar emitters.

    One parameter set serves both domains: the module object is stored once
    on the VaePair and called on either domain's low-level features.
    """

    def __init__(self, filters: tuple[int, ...], kernels: tuple[int, ...], latent_channels: int):
        super().__init__()
        blocks = []
        for i in range(ENCODER_DEPTH - SHARED_ENCODER_LAYERS, ENCODER_DEPTH):
            blocks.append(EncoderBlock(filters[i - 1], filters[i], kernels[i], ENC_STRIDES[i]))
        self.blocks = nn.Sequential(*blocks)
        self.to_mean = nn.Conv2d(filters[-1], latent_channels, 1)
        self.to_logvar = nn.Conv2d(filters[-1], latent_channels, 1)

    def forward(self, h):
        h = self.blocks(h)
        return self.to_mean(h), self.to_logvar(h)


class DecoderBlock(nn.Module):
    """Transposed convolution + batch norm + leaky rectifier.

    The final block swaps the norm/rectifier for a saturating tanh. An
    optional zero-mean perturbation can be injected after normalization and
    before the nonlinearity (used when the block runs as part of a grafted
    low stack).
    """

    def __init__(self, cin: int, cout: int, stride: int, output_padding: int, final: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(
            cin, cout, 3, stride, padding=1, output_padding=output_padding
        )
        self.final = final
        if final:
            self.bn = None
            self.act = nn.Tanh()
        else:
            self.bn = nn.BatchNorm2d(cout)
            self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x, noise_sigma: float = 0.0, generator: torch.Generator | None = None):
        h = self.deconv(x)
        if self.bn is not None:
            h = self.bn(h)
        if noise_sigma > 0.0:
            eps = torch.empty_like(h).normal_(0.0, noise_sigma, generator=generator)
            h = h + eps
        return self.act(h)


def _decoder_stack(latent_channels: int, filters: tuple[int, ...]) -> nn.ModuleList:
    if len(filters) != DECODER_DEPTH:
        raise ConfigurationError(f"decoder needs {DECODER_DEPTH} filter counts, got {filters}")
    if filters[-1] != 3:
        raise ConfigurationError("decoder must end in 3 output channels")
    blocks = []
    cin = latent_channels
    for i in range(DECODER_DEPTH):
        s_in, s_out = _DEC_SPATIAL[i], _DEC_SPATIAL[i + 1]
        stride = 2 if s_out > s_in else 1
        output_padding = s_out - ((s_in - 1) * stride - 2 + 3)
        blocks.append(
            DecoderBlock(cin, filters[i], stride, output_padding, final=(i == DECODER_DEPTH - 1))
        )
        cin = filters[i]
    return nn.ModuleList(blocks)


class VaePair(nn.Module):
    """Coupled per-domain codecs with a shared high-level encoder."""

    def __init__(
        self,
        enc_filters: tuple[int, ...],
        enc_kernels: tuple[int, ...],
        dec_filters: tuple[int, ...],
        latent_dim: int,
        split: StackSplit,
    ):
        super().__init__()
        if len(enc_filters) != ENCODER_DEPTH or len(enc_kernels) != ENCODER_DEPTH:
            raise ConfigurationError(
                f"encoder needs {ENCODER_DEPTH} filter and kernel entries, "
                f"got {enc_filters} / {enc_kernels}"
            )
        spatial = LATENT_SPATIAL * LATENT_SPATIAL
        if latent_dim % spatial != 0 or latent_dim < spatial:
            raise ConfigurationError(
                f"latent_dim must be a positive multiple of {spatial}, got {latent_dim}"
            )
        self.latent_dim = latent_dim
        self.latent_channels = latent_dim // spatial
        self.split = split

        def low_stack():
            blocks = []
            cin = 3
            for i in range(ENCODER_DEPTH - SHARED_ENCODER_LAYERS):
                blocks.append(EncoderBlock(cin, enc_filters[i], enc_kernels[i], ENC_STRIDES[i]))
                cin = enc_filters[i]
            return nn.Sequential(*blocks)

        self.encoder_low_s = low_stack()
        self.encoder_low_t = low_stack()
        self.encoder_high_shared = SharedEncoderTop(enc_filters, enc_kernels, self.latent_channels)
        self.decoder_s = _decoder_stack(self.latent_channels, dec_filters)
        self.decoder_t = _decoder_stack(self.latent_channels, dec_filters)

    def encoder_low(self, domain: str) -> nn.Sequential:
        _check_domain(domain)
        return self.encoder_low_s if domain == "s" else self.encoder_low_t

    def decoder(self, domain: str) -> nn.ModuleList:
        _check_domain(domain)
        return self.decoder_s if domain == "s" else self.decoder_t

    # the high/low stacks of the configured split, as module views
    @property
    def decoder_high_s(self) -> nn.ModuleList:
        return self.decoder_s[: self.split.n_high]

    @property
    def decoder_high_t(self) -> nn.ModuleList:
        return self.decoder_t[: self.split.n_high]

    @property
    def decoder_low_s(self) -> nn.ModuleList:
        return self.decoder_s[self.split.n_high :]

    @property
    def decoder_low_t(self) -> nn.ModuleList:
        return self.decoder_t[self.split.n_high :]


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, 1, 1),
            nn.BatchNorm2d(width),
            nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 1),
            nn.BatchNorm2d(width),
        )

    def forward(self, x):
        return x + self.body(x)


class ResidualGenerator(nn.Module):
    """Image-to-image generator: identity skip plus a residual correction.

    Zeroing the output projection makes the whole map the identity on
    [-1, 1] inputs, which is also why outputs stay in range via a clamp
    rather than a saturating activation.
    """

    def __init__(self, width: int, blocks: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, 1, 1), nn.BatchNorm2d(width), nn.ReLU()
        )
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(blocks)])
        self.project = nn.Conv2d(width, 3, 3, 1, 1)

    def forward(self, x):
        return torch.clamp(x + self.project(self.blocks(self.stem(x))), -1.0, 1.0)


class Discriminator(nn.Module):
    """Strided-convolution trunk with a domain head and a class head.

    Downsampling is all stride-2 convolution (no pooling). `forward` returns
    (domain_logit, class_logits, features) where features are the
    penultimate fully connected activations.
    """

    def __init__(self, filters: tuple[int, ...], feature_dim: int):
        super().__init__()
        if len(filters) != 4:
            raise ConfigurationError(f"discriminator needs 4 filter counts, got {filters}")
        layers: list[nn.Module] = [nn.Conv2d(3, filters[0], 3, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
        for cin, cout in zip(filters[:-1], filters[1:]):
            layers += [
                nn.Conv2d(cin, cout, 3, 2, 1),
                nn.BatchNorm2d(cout),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
        self.convs = nn.Sequential(*layers)
        side = IMAGE_SIZE
        for _ in range(4):
            side = (side + 1) // 2
        self.fc = nn.Linear(filters[-1] * side * side, feature_dim)
        self.fc_act = nn.LeakyReLU(LEAKY_SLOPE)
        self.domain_head = nn.Linear(feature_dim, 1)
        self.class_head = nn.Linear(feature_dim, NUM_CLASSES)
        self.feature_dim = feature_dim

    def forward(self, x):
        h = self.convs(x)
        features = self.fc_act(self.fc(h.flatten(1)))
        return self.domain_head(features).squeeze(1), self.class_head(features), features


class AlignmentHeads(nn.Module):
    """The two adversarial generators and the two (unshared) discriminators."""

    def __init__(self, generator_1, generator_2, discriminator_1, discriminator_2):
        super().__init__()
        self.generator_1 = generator_1
        self.generator_2 = generator_2
        self.discriminator_1 = discriminator_1
        self.discriminator_2 = discriminator_2

    def generator_for(self, channel: GraftChannel):
        return self.generator_1 if channel.code == "st" else self.generator_2

    def discriminator_for(self, channel: GraftChannel):
        return self.discriminator_1 if channel.code == "st" else self.discriminator_2


def _check_domain(domain: str) -> None:
    if domain not in DOMAINS:
        raise ConfigurationError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """DCGAN-style init, drawn from an explicit generator for reproducibility."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.normal_(1.0, 0.02, generator=generator)
            m.bias.data.zero_()


def build_model(
    config: "ExperimentConfig", dtype: torch.dtype = torch.float32
) -> tuple[VaePair, AlignmentHeads]:
    """Instantiate the reference architecture with seed-determined parameters."""
    vae = VaePair(
        enc_filters=tuple(config.enc_filters),
        enc_kernels=tuple(config.enc_kernels),
        dec_filters=tuple(config.dec_filters),
        latent_dim=config.latent_dim,
        split=config.split,
    )
    heads = AlignmentHeads(
        generator_1=ResidualGenerator(config.gen_filters, config.gen_blocks),
        generator_2=ResidualGenerator(config.gen_filters, config.gen_blocks),
        discriminator_1=Discriminator(tuple(config.disc_filters), config.feature_dim),
        discriminator_2=Discriminator(tuple(config.disc_filters), config.feature_dim),
    )
    gen = torch.Generator().manual_seed(config.seed)
    init_parameters(vae, gen)
    init_parameters(heads, gen)
    if dtype != torch.float32:
        vae.to(dtype)
        heads.to(dtype)
    return vae, heads


def _check_image_batch(batch: torch.Tensor, what: str) -> None:
    if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ContractViolation(
            f"{what} must be (batch, 3, {IMAGE_SIZE}, {IMAGE_SIZE}), got {tuple(batch.shape)}"
        )


def encode(
    vae: VaePair,
    batch: torch.Tensor,
    domain: str,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> LatentBatch:
    """Map preprocessed images to (mean, logvar, reparameterized sample)."""
    _check_image_batch(batch, f"encode({domain}) input")
    h = vae.encoder_low(domain)(batch)
    mean, logvar = vae.encoder_high_shared(h)
    if noise is None:
        noise = torch.empty_like(mean).normal_(0.0, 1.0, generator=generator)
    sample = mean + torch.exp(0.5 * logvar) * noise
    return LatentBatch(mean=mean, logvar=logvar, sample=sample)


def _latent_tensor(z: LatentBatch | torch.Tensor) -> torch.Tensor:
    return z.sample if isinstance(z, LatentBatch) else z


def decode(vae: VaePair, z: LatentBatch | torch.Tensor, domain: str) -> torch.Tensor:
    """Run the full 6-layer decoder of one domain."""
    h = _latent_tensor(z)
    for block in vae.decoder(domain):
        h = block(h)
    return h


def graft(
    vae: VaePair,
    z: LatentBatch | torch.Tensor,
    channel: GraftChannel,
    split: StackSplit | None = None,
    noise_sigma: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Decode through a cross-grafted stack: high layers from one domain's
    decoder, low layers from the other's.

    All splits are mutually compatible in the reference architecture; `split`
    defaults to the model's configured one.
    """
    split = split or vae.split
    h = _latent_tensor(z)
    high = vae.decoder(channel.high_domain)
    low = vae.decoder(channel.low_domain)
    for i in range(split.n_high):
        h = high[i](h)
    for i in range(split.n_high, DECODER_DEPTH):
        h = low[i](h, noise_sigma=noise_sigma, generator=generator)
    return h


def generate(heads: AlignmentHeads, association: torch.Tensor, channel: GraftChannel) -> torch.Tensor:
    """Apply the channel's adversarial generator to an association batch."""
    _check_image_batch(association, f"generate({channel.code}) input")
    return heads.generator_for(channel)(association)


def discriminate(
    heads: AlignmentHeads, batch: torch.Tensor, channel: GraftChannel
) -> tuple[torch.Tensor, torch.Tensor]:
    """Channel discriminator outputs: (per-sample domain probability, class logits)."""
    _check_image_batch(batch, f"discriminate({channel.code}) input")
    domain_logit, class_logits, _ = heads.discriminator_for(channel)(batch)
    return torch.sigmoid(domain_logit), class_logits


def parameter_groups(vae: VaePair, heads: AlignmentHeads) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Named parameters bucketed by subnetwork, with the shared encoder counted once."""
    groups: dict[str, list[tuple[str, nn.Parameter]]] = {
        "encoder_low_s": [],
        "encoder_low_t": [],
        "encoder_shared": [],
        "decoder_s": [],
        "decoder_t": [],
        "generator_1": [],
        "generator_2": [],
        "discriminator_1": [],
        "discriminator_2": [],
    }
    for name, p in vae.named_parameters():
        key = name.split(".", 1)[0]
        mapping = {
            "encoder_low_s": "encoder_low_s",
            "encoder_low_t": "encoder_low_t",
            "encoder_high_shared": "encoder_shared",
            "decoder_s": "decoder_s",
            "decoder_t": "decoder_t",
        }
        groups[mapping[key]].append((f"vae.{name}", p))
    for name, p in heads.named_parameters():
        groups[name.split(".", 1)[0]].append((f"heads.{name}", p))
    return groups
