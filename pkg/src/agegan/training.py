"""Alternating discriminator/generator optimization with checkpointing and logging.

Each iteration runs `d_steps_per_g` discriminator updates followed by one
generator update on the same final batch. One history row is logged per
iteration: adv/reg/cls come from the last discriminator step (adv is the full
critic loss including the gradient penalty), age/id/recon/cycle from the
generator step, and both totals are assembled in float64 from those logged
parts so the CSV is exactly self-consistent under the configured weights.
The generator's own optimization surrogate (its adversarial term and its own
encoder multi-task losses) is returned by generator_step directly.

Determinism: train() pins torch to one thread and derives every random draw
from the config seed, so two runs with the same config produce identical
histories, and resuming from a checkpoint reproduces the uninterrupted run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import TrainingConfig
from .data import DatasetStats, compute_stats, normalize_ages, sample_target_ages
from .decomposition import decompose
from .errors import NonFiniteLoss
from .losses import LossParts, LossReport, LossWeights, assemble_report
from .networks import NetworkBundle, build_bundle, load_checkpoint, save_checkpoint

HISTORY_COLUMNS = ("step",) + LossReport.CSV_FIELDS


@dataclass
class Batch:
    """One training batch, channel-first images plus per-sample labels."""

    images: torch.Tensor          # (B, 3, H, W) float32 in [-1, 1]
    ages_normalized: torch.Tensor  # (B,) float32
    identities: torch.Tensor      # (B,) long


@dataclass
class TrainingState:
    config: TrainingConfig
    stats: DatasetStats
    bundle: NetworkBundle
    optimizer_d: torch.optim.Optimizer
    optimizer_g: torch.optim.Optimizer
    sampler: torch.Generator
    step: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def weights(self) -> LossWeights:
        return LossWeights.from_config(self.config)


def prepare_batch_source(samples, stats: DatasetStats) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack a sample list into (images NCHW, normalized ages, identity indices)."""
    images = torch.from_numpy(
        np.stack([s.image for s in samples]).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    ages = normalize_ages([s.age for s in samples], stats)
    identities = torch.tensor([s.identity for s in samples], dtype=torch.long)
    return images, ages, identities


def initialize_state(config: TrainingConfig, stats: DatasetStats) -> TrainingState:
    """Fresh networks, optimizers and sampling RNG, all seeded from the config."""
    torch.manual_seed(config.seed)
    bundle = build_bundle(config, stats.identity_count)
    optimizer_d = torch.optim.Adam(list(bundle.discriminator_parameters()),
                                   lr=config.learning_rate,
                                   betas=(config.adam_beta1, config.adam_beta2))
    optimizer_g = torch.optim.Adam(list(bundle.generator_parameters()),
                                   lr=config.learning_rate,
                                   betas=(config.adam_beta1, config.adam_beta2))
    sampler = torch.Generator()
    sampler.manual_seed(config.seed + 1_000_003)
    return TrainingState(config=config, stats=stats, bundle=bundle,
                         optimizer_d=optimizer_d, optimizer_g=optimizer_g, sampler=sampler)


def _require_finite(terms: dict, context: str) -> None:
    bad = {k: v for k, v in terms.items() if not math.isfinite(v)}
    if bad:
        raise NonFiniteLoss(f"non-finite loss in {context}: {bad}", terms=terms)


def discriminator_step(state: TrainingState, batch: Batch) -> LossReport:
    """One critic update: adversarial loss with gradient penalty plus the
    discriminator-side multi-task losses on real images. Touches only
    discriminator-side parameters."""
    config, bundle, weights = state.config, state.bundle, state.weights
    x = batch.images
    n = x.shape[0]

    target_years = sample_target_ages(state.sampler, state.stats, n)
    target_norm = normalize_ages(target_years, state.stats)
    with torch.no_grad():
        fake = bundle.translate(x, target_norm)

    latent_real, _ = bundle.encode_discriminator(x)
    real_scores = bundle.critic_head(latent_real)
    fake_scores = bundle.discriminator_score(fake)

    mix = torch.rand(n, generator=state.sampler)
    penalty = losses.gradient_penalty(bundle.discriminator_score, x, fake, mix)
    adv = losses.wasserstein_critic_loss(real_scores, fake_scores, penalty, config.gamma_gp)

    parts = decompose(latent_real, on_degenerate="clamp")
    reg = losses.age_regression_loss(bundle.discriminator_age_head(parts.age_basis),
                                     batch.ages_normalized)
    cls = losses.identity_classification_loss(bundle.discriminator_id_head(parts.identity_basis),
                                              batch.identities)

    total = losses.total_discriminator_loss(LossParts(adv=adv, reg=reg, cls=cls), weights)
    report = assemble_report(adv=float(adv), reg=float(reg), cls=float(cls),
                             age=0.0, id=0.0, recon=0.0, cycle=0.0, weights=weights)
    _require_finite({"adv": report.adv, "reg": report.reg, "cls": report.cls,
                     "penalty": float(penalty)}, "discriminator step")

    state.optimizer_d.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer_d.step()
    return report


def generator_step(state: TrainingState, batch: Batch) -> LossReport:
    """One generator update with all generator-side terms. Discriminator
    parameters are frozen for the duration (gradients still flow through the
    critic and, per config, its age head into the generator)."""
    config, bundle, weights = state.config, state.bundle, state.weights
    x = batch.images
    n = x.shape[0]

    d_params = list(bundle.discriminator_parameters())
    frozen = [p.requires_grad for p in d_params]
    for p in d_params:
        p.requires_grad_(False)
    try:
        latent, skips = bundle.encode_generator(x)
        parts = decompose(latent, on_degenerate="clamp")

        reg = losses.age_regression_loss(bundle.generator_age_head(parts.age_basis),
                                         batch.ages_normalized)
        cls = losses.identity_classification_loss(bundle.generator_id_head(parts.identity_basis),
                                                  batch.identities)

        target_years = sample_target_ages(state.sampler, state.stats, n)
        target_norm = normalize_ages(target_years, state.stats)
        fake = bundle.decode(parts.identity_basis, target_norm, skips)

        fake_scores = bundle.discriminator_score(fake)
        adv_view = fake_scores.mean()

        if config.age_loss_encoder == "discriminator":
            fake_latent_age, _ = bundle.encode_discriminator(fake)
            age_estimate = bundle.discriminator_age_head(
                decompose(fake_latent_age, on_degenerate="clamp").age_basis)
        else:
            fake_latent_age, _ = bundle.encode_generator(fake)
            age_estimate = bundle.generator_age_head(
                decompose(fake_latent_age, on_degenerate="clamp").age_basis)
        age_term = losses.fake_age_error_loss(age_estimate, target_norm)

        # cycle always re-enters through the generator's own encoder
        cycle_latent, fake_skips = bundle.encode_generator(fake)
        cycle_id = decompose(cycle_latent, on_degenerate="clamp").identity_basis

        if config.id_loss_encoder == "generator":
            translated_id = cycle_id
        else:
            fake_latent_id, _ = bundle.encode_discriminator(fake)
            translated_id = decompose(fake_latent_id, on_degenerate="clamp").identity_basis
        id_term = losses.identity_preservation_loss(parts.identity_basis, translated_id)

        recon = losses.pixel_mse(bundle.decode(parts.identity_basis, batch.ages_normalized, skips), x)

        cycled = bundle.decode(cycle_id, batch.ages_normalized, fake_skips)
        cycle = losses.pixel_mse(cycled, x)

        objective = losses.total_generator_loss(
            LossParts(adv=-adv_view, reg=reg, cls=cls, age=age_term, id=id_term,
                      recon=recon, cycle=cycle), weights)

        report = assemble_report(adv=float(adv_view), reg=float(reg), cls=float(cls),
                                 age=float(age_term), id=float(id_term),
                                 recon=float(recon), cycle=float(cycle), weights=weights)
        _require_finite({"adv": report.adv, "reg": report.reg, "cls": report.cls,
                         "age": report.age, "id": report.id, "recon": report.recon,
                         "cycle": report.cycle}, "generator step")

        state.optimizer_g.zero_grad(set_to_none=True)
        objective.backward()
        state.optimizer_g.step()
    finally:
        for p, flag in zip(d_params, frozen):
            p.requires_grad_(flag)
    return report


def _batch_at(images, ages, identities, n: int, config: TrainingConfig,
              batch_counter: int, perm_cache: dict) -> Batch:
    """Deterministic batch for a global batch counter: epoch e is a fresh
    permutation seeded from (seed, e), consumed in contiguous chunks."""
    per_epoch = n // config.batch_size
    if per_epoch < 1:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds dataset size {n} (partial batches are dropped)")
    epoch, slot = divmod(batch_counter, per_epoch)
    if epoch not in perm_cache:
        perm_cache.clear()
        seed = int(np.random.SeedSequence([config.seed, epoch]).generate_state(1)[0])
        perm_cache[epoch] = np.random.default_rng(seed).permutation(n)
    idx = perm_cache[epoch][slot * config.batch_size:(slot + 1) * config.batch_size]
    idx = torch.from_numpy(np.ascontiguousarray(idx))
    return Batch(images=images[idx], ages_normalized=ages[idx], identities=identities[idx])


def save_training_checkpoint(path: str | Path, state: TrainingState) -> None:
    extra = {
        "step": state.step,
        "optimizer_d": state.optimizer_d.state_dict(),
        "optimizer_g": state.optimizer_g.state_dict(),
        "sampler_state": state.sampler.get_state(),
        "history": list(state.history),
    }
    save_checkpoint(path, state.bundle, stats_dict=vars(state.stats), extra=extra)


def load_training_state(path: str | Path) -> TrainingState:
    bundle, stats_dict, extra = load_checkpoint(path)
    if not extra:
        raise ValueError(f"{path} has no training payload; it is an inference checkpoint")
    stats = DatasetStats(**stats_dict)
    state = initialize_state(bundle.config, stats)
    state.bundle.load_state_dicts(bundle.state_dicts())
    state.optimizer_d.load_state_dict(extra["optimizer_d"])
    state.optimizer_g.load_state_dict(extra["optimizer_g"])
    state.sampler.set_state(extra["sampler_state"])
    state.step = int(extra["step"])
    state.history = list(extra["history"])
    return state


def _history_row(step: int, d_report: LossReport, g_report: LossReport,
                 weights: LossWeights) -> dict:
    merged = assemble_report(adv=d_report.adv, reg=d_report.reg, cls=d_report.cls,
                             age=g_report.age, id=g_report.id,
                             recon=g_report.recon, cycle=g_report.cycle, weights=weights)
    row = {"step": step}
    row.update({name: getattr(merged, name) for name in LossReport.CSV_FIELDS})
    return row


def write_history_csv(path: str | Path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow([row["step"]] + [repr(float(row[c])) for c in LossReport.CSV_FIELDS])


def read_history_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            row = {"step": int(record["step"])}
            row.update({c: float(record[c]) for c in LossReport.CSV_FIELDS})
            rows.append(row)
    return rows


def train(config: TrainingConfig, samples, run_dir: str | Path | None = None, *,
          stats: DatasetStats | None = None, resume_from: str | Path | None = None,
          checkpoint_interval: int = 500, log_every: int = 0):
    """Run the alternating optimization for config.total_steps iterations.

    Returns (final TrainingState, history rows). When run_dir is given, writes
    history.csv and checkpoints/step-<n>.pt there (always one final
    checkpoint). resume_from continues a saved training checkpoint; the config
    and dataset must match the original run for the histories to align.
    """
    torch.set_num_threads(1)  # keeps seeded runs bit-reproducible
    stats = stats or compute_stats(samples)

    if resume_from is not None:
        state = load_training_state(resume_from)
        config = state.config
    else:
        state = initialize_state(config, stats)

    images, ages, identities = prepare_batch_source(samples, state.stats)
    n = images.shape[0]
    perm_cache: dict = {}

    run_dir = Path(run_dir) if run_dir is not None else None
    checkpoint_dir = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_dir = run_dir / "checkpoints"
        checkpoint_dir.mkdir(exist_ok=True)

    while state.step < config.total_steps:
        iteration = state.step + 1
        batch_base = state.step * config.d_steps_per_g
        d_report = None
        for j in range(config.d_steps_per_g):
            batch = _batch_at(images, ages, identities, n, config, batch_base + j, perm_cache)
            d_report = discriminator_step(state, batch)
        g_report = generator_step(state, batch)
        state.step = iteration
        state.history.append(_history_row(iteration, d_report, g_report, state.weights))

        if log_every and iteration % log_every == 0:
            row = state.history[-1]
            print(f"step {iteration}: total_d={row['total_d']:.4f} total_g={row['total_g']:.4f} "
                  f"recon={row['recon']:.4f} age={row['age']:.4f}")
        if checkpoint_dir is not None and checkpoint_interval > 0 and iteration % checkpoint_interval == 0:
            save_training_checkpoint(checkpoint_dir / f"step-{iteration:06d}.pt", state)
            write_history_csv(run_dir / "history.csv", state.history)

    if checkpoint_dir is not None:
        save_training_checkpoint(checkpoint_dir / f"step-{state.step:06d}.pt", state)
    if run_dir is not None:
        write_history_csv(run_dir / "history.csv", state.history)
    return state, state.history
