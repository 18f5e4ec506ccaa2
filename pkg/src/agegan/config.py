"""Training configuration and its flat key=value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import UnknownConfigKey

AGE_LOSS_ENCODERS = ("discriminator", "generator")
ID_LOSS_ENCODERS = ("generator", "discriminator")


@dataclass
class TrainingConfig:
    """Every knob of a training run. Defaults are the published full-scale settings.

    Loss weights follow the overall objectives: the discriminator total adds
    lambda_reg_d/lambda_cls_d multi-task terms to the adversarial loss, the
    generator total adds its own multi-task terms plus the age-error, identity,
    reconstruction and cycle terms.
    """

    lambda_reg_d: float = 0.001
    lambda_reg_g: float = 0.001
    lambda_cls_d: float = 0.1
    lambda_cls_g: float = 0.1
    lambda_age: float = 0.02
    lambda_id: float = 1.0
    lambda_recon: float = 10.0
    lambda_cycle: float = 10.0
    gamma_gp: float = 10.0
    learning_rate: float = 1e-4
    batch_size: int = 16
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    d_steps_per_g: int = 1
    total_steps: int = 2000
    seed: int = 0
    resolution: int = 128
    latent_channels: int = 256
    skip_levels: int = 2
    age_loss_encoder: str = "discriminator"
    id_loss_encoder: str = "generator"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_reg_d", "lambda_reg_g", "lambda_cls_d", "lambda_cls_g",
                     "lambda_age", "lambda_id", "lambda_recon", "lambda_cycle", "gamma_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (gradient penalty pairs real with fake)")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.resolution not in (32, 64, 128):
            raise ValueError(f"resolution must be one of 32, 64, 128, got {self.resolution}")
        levels = encoder_levels(self.resolution)
        if self.latent_channels % (2 ** (levels - 1)) != 0 or self.latent_channels < 2 ** (levels - 1):
            raise ValueError(
                f"latent_channels must be a multiple of 2**{levels - 1} for {levels} encoder levels")
        if not 0 <= self.skip_levels <= levels - 1:
            raise ValueError(f"skip_levels must lie in [0, {levels - 1}] for resolution {self.resolution}")
        if self.age_loss_encoder not in AGE_LOSS_ENCODERS:
            raise ValueError(f"age_loss_encoder must be one of {AGE_LOSS_ENCODERS}")
        if self.id_loss_encoder not in ID_LOSS_ENCODERS:
            raise ValueError(f"id_loss_encoder must be one of {ID_LOSS_ENCODERS}")

    @classmethod
    def toy(cls, **overrides) -> "TrainingConfig":
        """Desk-scale preset: 32x32 corpus, small bottleneck, loss weights rebalanced
        so the auxiliary age/identity heads learn within a few thousand steps."""
        base = dict(
            resolution=32,
            latent_channels=64,
            skip_levels=1,
            lambda_reg_d=1.0,
            lambda_reg_g=1.0,
            lambda_cls_d=1.0,
            lambda_cls_g=1.0,
            lambda_age=1.0,
            learning_rate=2e-4,
            total_steps=2000,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)


def encoder_levels(resolution: int) -> int:
    """Number of stride-2 encoder stages: 4 at full scale, 3 for the toy sizes."""
    return 4 if resolution >= 128 else 3


def valid_config_keys() -> tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(TrainingConfig))


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text: str, base: TrainingConfig | None = None) -> TrainingConfig:
    """Parse `key=value` lines; blank lines and '#' comments are ignored.

    Unknown keys are rejected with the full list of valid keys.
    """
    values = (base or TrainingConfig()).to_dict()
    fields = {f.name: f for f in dataclasses.fields(TrainingConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UnknownConfigKey(
                f"line {lineno}: expected key=value, got {stripped!r}; "
                f"valid keys: {', '.join(valid_config_keys())}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in fields:
            raise UnknownConfigKey(
                f"unknown config key {key!r}; valid keys: {', '.join(valid_config_keys())}")
        try:
            values[key] = _coerce(fields[key], raw.strip())
        except ValueError as exc:
            raise UnknownConfigKey(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return TrainingConfig(**values)


def load_config(path: str | Path, base: TrainingConfig | None = None) -> TrainingConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)


def config_to_text(config: TrainingConfig) -> str:
    lines = [f"{f.name}={getattr(config, f.name)}" for f in dataclasses.fields(config)]
    return "\n".join(lines) + "\n"


def save_config(config: TrainingConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(config), encoding="utf-8")


def apply_overrides(config: TrainingConfig, overrides: list[str]) -> TrainingConfig:
    """Apply repeated key=value override flags on top of a config."""
    return parse_config_text("\n".join(overrides), base=config)
