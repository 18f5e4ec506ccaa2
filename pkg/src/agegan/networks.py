"""Generator, discriminator and auxiliary heads.

The generator is a U-Net style encoder/decoder; the encoder of the
discriminator shares the architecture but never the parameters. Both encoders
end in global average pooling, and every latent-space consumer works on the
pooled vector. The decoder receives the identity direction broadcast over the
bottleneck grid plus one constant channel holding the normalized target age;
only the `skip_levels` shallowest encoder maps are wired across, so age
information cannot bypass the bottleneck through deep skips.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch
from torch import nn

from .config import TrainingConfig, encoder_levels
from .decomposition import decompose
from .errors import CheckpointWriteError, ShapeMismatch

CHECKPOINT_FORMAT_VERSION = 1

MODULE_NAMES = (
    "generator_encoder", "generator_decoder", "generator_age_head", "generator_id_head",
    "discriminator_encoder", "critic_head", "discriminator_age_head", "discriminator_id_head",
)


def _level_widths(latent_channels: int, levels: int) -> list[int]:
    # widths double per level up to the bottleneck channel count
    return [latent_channels >> (levels - 1 - i) for i in range(levels)]


class ImageEncoder(nn.Module):
    """Stride-2 conv stack ending in global average pooling.

    forward returns (pooled latent of length latent_channels, skip list ordered
    shallow -> deep, one entry per level).
    """

    def __init__(self, resolution: int, latent_channels: int):
        super().__init__()
        self.resolution = resolution
        self.latent_channels = latent_channels
        self.levels = encoder_levels(resolution)
        widths = _level_widths(latent_channels, self.levels)
        blocks = []
        in_ch = 3
        for i, width in enumerate(widths):
            layers = [nn.Conv2d(in_ch, width, kernel_size=4, stride=2, padding=1)]
            if i < self.levels - 1:
                # no normalization on the last block: pooling instance-normalized
                # maps would collapse the latent to the affine bias
                layers.append(nn.InstanceNorm2d(width, affine=True))
            layers.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*layers))
            in_ch = width
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ShapeMismatch(
                f"expected (B, 3, {self.resolution}, {self.resolution}) input, got {tuple(x.shape)}")
        skips = []
        h = x
        for block in self.blocks:
            h = block(h)
            skips.append(h)
        latent = h.mean(dim=(2, 3))
        return latent, skips


class ImageDecoder(nn.Module):
    """Mirror of the encoder: broadcast bottleneck, upsample blocks, tanh output."""

    def __init__(self, resolution: int, latent_channels: int, skip_levels: int):
        super().__init__()
        self.resolution = resolution
        self.latent_channels = latent_channels
        self.skip_levels = skip_levels
        self.levels = encoder_levels(resolution)
        self.widths = _level_widths(latent_channels, self.levels)
        self.bottleneck_size = resolution // (2 ** self.levels)

        self.fuse = nn.Sequential(
            nn.Conv2d(latent_channels + 1, latent_channels, kernel_size=3, padding=1),
            nn.InstanceNorm2d(latent_channels, affine=True),
            nn.ReLU(),
        )
        stages = []
        in_ch = latent_channels
        for stage in range(1, self.levels + 1):
            skip_index = self.levels - 1 - stage  # encoder level with matching spatial size
            skip_ch = self.widths[skip_index] if 0 <= skip_index < skip_levels else 0
            out_ch = self.widths[max(skip_index, 0)]
            stages.append(nn.Sequential(
                nn.Conv2d(in_ch + skip_ch, out_ch, kernel_size=3, padding=1),
                nn.InstanceNorm2d(out_ch, affine=True),
                nn.ReLU(),
            ))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(in_ch, 3, kernel_size=3, padding=1)

    def _check_skips(self, skips, batch: int):
        if len(skips) != self.levels:
            raise ShapeMismatch(f"expected {self.levels} skip levels, got {len(skips)}")
        for level, skip in enumerate(skips):
            size = self.resolution // (2 ** (level + 1))
            expected = (batch, self.widths[level], size, size)
            if tuple(skip.shape) != expected:
                raise ShapeMismatch(
                    f"skip level {level}: expected {expected}, got {tuple(skip.shape)}")

    def forward(self, identity_basis: torch.Tensor, ages_normalized: torch.Tensor, skips):
        if identity_basis.ndim != 2 or identity_basis.shape[1] != self.latent_channels:
            raise ShapeMismatch(
                f"identity basis must be (B, {self.latent_channels}), got {tuple(identity_basis.shape)}")
        batch = identity_basis.shape[0]
        ages_normalized = torch.as_tensor(ages_normalized, dtype=identity_basis.dtype)
        if ages_normalized.ndim == 0:
            ages_normalized = ages_normalized.expand(batch)
        if ages_normalized.shape != (batch,):
            raise ShapeMismatch("one normalized age per sample required")
        self._check_skips(skips, batch)

        s = self.bottleneck_size
        id_map = identity_basis[:, :, None, None].expand(batch, self.latent_channels, s, s)
        age_map = ages_normalized[:, None, None, None].expand(batch, 1, s, s)
        h = self.fuse(torch.cat([id_map, age_map], dim=1))
        for stage_index, stage in enumerate(self.stages, start=1):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            skip_index = self.levels - 1 - stage_index
            if 0 <= skip_index < self.skip_levels:
                h = torch.cat([h, skips[skip_index]], dim=1)
            h = stage(h)
        return torch.tanh(self.head(h))


class AgeRegressor(nn.Module):
    """Two fully-connected layers from the scalar age basis to a normalized age."""

    def __init__(self, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(1, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, age_basis: torch.Tensor) -> torch.Tensor:
        age_basis = torch.as_tensor(age_basis)
        squeeze = age_basis.ndim == 0
        flat = age_basis.reshape(-1, 1)
        out = self.net(flat).reshape(-1)
        return out[0] if squeeze else out


class IdentityClassifier(nn.Module):
    """Two fully-connected layers from the identity basis to identity probabilities."""

    def __init__(self, latent_channels: int, n_identities: int, hidden: int = 64):
        super().__init__()
        self.n_identities = n_identities
        self.net = nn.Sequential(
            nn.Linear(latent_channels, hidden), nn.ReLU(), nn.Linear(hidden, n_identities))

    def forward(self, identity_basis: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.net(identity_basis), dim=-1)


class CriticHead(nn.Module):
    """Single linear map from the pooled discriminator latent to one score."""

    def __init__(self, latent_channels: int):
        super().__init__()
        self.net = nn.Linear(latent_channels, 1)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        return self.net(latent).squeeze(-1)


class NetworkBundle(nn.Module):
    """All eight parameterized functions, with disjoint generator/discriminator sides."""

    def __init__(self, config: TrainingConfig, identity_count: int):
        super().__init__()
        self.config = config
        self.identity_count = identity_count
        self.generator_encoder = ImageEncoder(config.resolution, config.latent_channels)
        self.generator_decoder = ImageDecoder(config.resolution, config.latent_channels,
                                              config.skip_levels)
        self.generator_age_head = AgeRegressor()
        self.generator_id_head = IdentityClassifier(config.latent_channels, identity_count)
        self.discriminator_encoder = ImageEncoder(config.resolution, config.latent_channels)
        self.critic_head = CriticHead(config.latent_channels)
        self.discriminator_age_head = AgeRegressor()
        self.discriminator_id_head = IdentityClassifier(config.latent_channels, identity_count)

    # -- parameter groups ---------------------------------------------------

    GENERATOR_SIDE = ("generator_encoder", "generator_decoder",
                      "generator_age_head", "generator_id_head")
    DISCRIMINATOR_SIDE = ("discriminator_encoder", "critic_head",
                          "discriminator_age_head", "discriminator_id_head")

    def generator_parameters(self):
        for name in self.GENERATOR_SIDE:
            yield from getattr(self, name).parameters()

    def discriminator_parameters(self):
        for name in self.DISCRIMINATOR_SIDE:
            yield from getattr(self, name).parameters()

    # -- composite forwards -------------------------------------------------

    def encode_generator(self, x: torch.Tensor):
        return self.generator_encoder(x)

    def encode_discriminator(self, x: torch.Tensor):
        return self.discriminator_encoder(x)

    def decode(self, identity_basis, ages_normalized, skips) -> torch.Tensor:
        return self.generator_decoder(identity_basis, ages_normalized, skips)

    def translate(self, x: torch.Tensor, ages_normalized: torch.Tensor) -> torch.Tensor:
        """Full generator pass: encode, split off the age magnitude, decode at
        the requested ages."""
        latent, skips = self.generator_encoder(x)
        parts = decompose(latent, on_degenerate="clamp")
        return self.generator_decoder(parts.identity_basis, ages_normalized, skips)

    def discriminator_score(self, x: torch.Tensor) -> torch.Tensor:
        latent, _ = self.discriminator_encoder(x)
        return self.critic_head(latent)

    def state_dicts(self) -> dict:
        return {name: getattr(self, name).state_dict() for name in MODULE_NAMES}

    def load_state_dicts(self, dicts: dict) -> None:
        for name in MODULE_NAMES:
            getattr(self, name).load_state_dict(dicts[name])


def build_bundle(config: TrainingConfig, identity_count: int) -> NetworkBundle:
    """Instantiate a bundle; parameter init draws from torch's current RNG state."""
    if identity_count < 1:
        raise ValueError("identity_count must be >= 1")
    return NetworkBundle(config, identity_count)


def save_checkpoint(path: str | Path, bundle: NetworkBundle, stats_dict: dict,
                    extra: dict | None = None) -> None:
    """Persist the eight parameter sets with the config and dataset stats.

    `extra` carries training-only payload (optimizers, step, rng state); it is
    ignored by inference-time loads.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "stats": dict(stats_dict),
        "identity_count": bundle.identity_count,
        "modules": bundle.state_dicts(),
        "extra": extra or {},
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as exc:
        raise CheckpointWriteError(f"could not write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path):
    """Load a checkpoint and rebuild the bundle; returns (bundle, stats_dict, extra)."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    config = TrainingConfig(**payload["config"])
    bundle = NetworkBundle(config, payload["identity_count"])
    bundle.load_state_dicts(payload["modules"])
    return bundle, payload["stats"], payload.get("extra", {})
