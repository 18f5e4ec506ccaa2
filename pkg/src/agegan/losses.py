"""Loss terms for the adversarial aging objectives.

All functions are pure and differentiable, operating on torch tensors. Ages
are expected in normalized [-1, 1] units throughout; conversion back to years
happens only in reporting code.

Sign convention for reports: the `adv` field of a LossReport always holds the
critic-side adversarial value, i.e. the quantity that enters the discriminator
total with coefficient +1 and the generator total with coefficient -1. The
generator's optimization surrogate keeps only the fake-score term, so a
generator step records adv = mean critic score of its fakes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .errors import EmptyBatch, InvalidLabel, ShapeMismatch, ZeroVector

PROBABILITY_FLOOR = 1e-12


@dataclass
class LossWeights:
    """Coefficients of the two total objectives plus the gradient-penalty factor."""

    lambda_reg_d: float = 0.001
    lambda_reg_g: float = 0.001
    lambda_cls_d: float = 0.1
    lambda_cls_g: float = 0.1
    lambda_age: float = 0.02
    lambda_id: float = 1.0
    lambda_recon: float = 10.0
    lambda_cycle: float = 10.0
    gamma_gp: float = 10.0

    @classmethod
    def from_config(cls, config) -> "LossWeights":
        return cls(**{f.name: getattr(config, f.name) for f in fields(cls)})


@dataclass
class LossReport:
    """Named scalar value of every objective term at one step.

    total_d and total_g are assembled in float64 from the part fields, so
    recomputing the weighted sums from a persisted report reproduces them
    exactly (to well under 1e-6).
    """

    adv: float = 0.0
    reg: float = 0.0
    cls: float = 0.0
    age: float = 0.0
    id: float = 0.0
    recon: float = 0.0
    cycle: float = 0.0
    total_d: float = 0.0
    total_g: float = 0.0

    CSV_FIELDS = ("adv", "reg", "cls", "age", "id", "recon", "cycle", "total_d", "total_g")


def total_discriminator_loss(parts, weights: LossWeights):
    """Discriminator objective: adv + lambda_reg_d * reg + lambda_cls_d * cls."""
    return parts.adv + weights.lambda_reg_d * parts.reg + weights.lambda_cls_d * parts.cls


def total_generator_loss(parts, weights: LossWeights):
    """Generator objective. parts.adv must already be the (negated) adversarial
    term, i.e. -mean critic score of the fakes; it enters with coefficient +1."""
    return (parts.adv
            + weights.lambda_reg_g * parts.reg
            + weights.lambda_cls_g * parts.cls
            + weights.lambda_age * parts.age
            + weights.lambda_id * parts.id
            + weights.lambda_recon * parts.recon
            + weights.lambda_cycle * parts.cycle)


class LossParts:
    """Bag of objective terms; fields may be floats or live tensors, so the
    total_* functions serve both logging and backpropagation."""

    __slots__ = ("adv", "reg", "cls", "age", "id", "recon", "cycle")

    def __init__(self, adv=0.0, reg=0.0, cls=0.0, age=0.0, id=0.0, recon=0.0, cycle=0.0):
        self.adv, self.reg, self.cls = adv, reg, cls
        self.age, self.id, self.recon, self.cycle = age, id, recon, cycle


def assemble_report(adv: float, reg: float, cls: float, age: float, id: float,
                    recon: float, cycle: float, weights: LossWeights) -> LossReport:
    """Build a LossReport with both totals assembled from the given parts.

    `adv` follows the critic-side sign convention (see module docstring):
    total_d adds it, total_g subtracts it.
    """
    d_parts = LossParts(adv=adv, reg=reg, cls=cls)
    g_parts = LossParts(adv=-adv, reg=reg, cls=cls, age=age, id=id, recon=recon, cycle=cycle)
    return LossReport(
        adv=adv, reg=reg, cls=cls, age=age, id=id, recon=recon, cycle=cycle,
        total_d=float(total_discriminator_loss(d_parts, weights)),
        total_g=float(total_generator_loss(g_parts, weights)),
    )


def _check_nonempty(*tensors):
    for t in tensors:
        if t.numel() == 0:
            raise EmptyBatch("loss over an empty batch is undefined")


def age_regression_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and target ages (normalized units)."""
    predicted = torch.as_tensor(predicted)
    target = torch.as_tensor(target)
    if predicted.shape != target.shape:
        raise ShapeMismatch(f"predicted {tuple(predicted.shape)} vs target {tuple(target.shape)}")
    _check_nonempty(predicted)
    return ((predicted - target) ** 2).mean()


def fake_age_error_loss(estimated: torch.Tensor, target_ages: torch.Tensor) -> torch.Tensor:
    """Age error of translated images: same contract as age_regression_loss,
    applied to features of fakes against their sampled target ages."""
    return age_regression_loss(estimated, target_ages)


def identity_classification_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log probability of the true identity.

    Probabilities are floored at 1e-12 before the log so a confidently wrong
    classifier yields a large but finite loss.
    """
    probabilities = torch.as_tensor(probabilities)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probabilities.ndim != 2:
        raise ShapeMismatch("probabilities must be (batch, classes)")
    if labels.shape != probabilities.shape[:1]:
        raise ShapeMismatch("labels must be one index per probability row")
    _check_nonempty(probabilities)
    n_classes = probabilities.shape[1]
    if bool((labels < 0).any()) or bool((labels >= n_classes).any()):
        raise InvalidLabel(f"labels must lie in [0, {n_classes})")
    true_prob = probabilities.gather(1, labels.unsqueeze(1)).squeeze(1)
    return -torch.log(true_prob.clamp_min(PROBABILITY_FLOOR)).mean()


def wasserstein_critic_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor,
                            penalty, gamma: float) -> torch.Tensor:
    """Critic loss: mean(fake) - mean(real) + gamma * penalty."""
    real_scores = torch.as_tensor(real_scores)
    fake_scores = torch.as_tensor(fake_scores)
    _check_nonempty(real_scores, fake_scores)
    return fake_scores.mean() - real_scores.mean() + gamma * penalty


def generator_adversarial_term(fake_scores: torch.Tensor) -> torch.Tensor:
    """The generator-dependent adversarial term: -mean(fake_scores)."""
    fake_scores = torch.as_tensor(fake_scores)
    _check_nonempty(fake_scores)
    return -fake_scores.mean()


def gradient_penalty(critic, real_batch: torch.Tensor, fake_batch: torch.Tensor,
                     mix: torch.Tensor) -> torch.Tensor:
    """Mean of (||grad critic(x_hat)||_2 - 1)^2 over x_hat = mix*real + (1-mix)*fake.

    `critic` must map an image batch to one score per sample and be
    differentiable end to end; `mix` holds one uniform [0,1] draw per sample.
    The result keeps its graph so it can be backpropagated through (the
    penalty trains the critic via second derivatives).
    """
    if real_batch.shape != fake_batch.shape:
        raise ShapeMismatch(
            f"real {tuple(real_batch.shape)} vs fake {tuple(fake_batch.shape)}")
    _check_nonempty(real_batch)
    mix = torch.as_tensor(mix, dtype=real_batch.dtype)
    if mix.ndim == 0:
        mix = mix.expand(real_batch.shape[0])
    if mix.shape != real_batch.shape[:1]:
        raise ShapeMismatch("mix must hold one coefficient per sample")
    view = (-1,) + (1,) * (real_batch.ndim - 1)
    m = mix.reshape(view)
    x_hat = (m * real_batch.detach() + (1.0 - m) * fake_batch.detach()).requires_grad_(True)
    scores = critic(x_hat)
    grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)[0]
    norms = grads.reshape(grads.shape[0], -1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def identity_preservation_loss(original_id: torch.Tensor, translated_id: torch.Tensor) -> torch.Tensor:
    """Mean (1 - cosine similarity) between original and translated identity bases."""
    original_id = torch.as_tensor(original_id)
    translated_id = torch.as_tensor(translated_id)
    if original_id.shape != translated_id.shape:
        raise ShapeMismatch(
            f"original {tuple(original_id.shape)} vs translated {tuple(translated_id.shape)}")
    _check_nonempty(original_id)
    norm_a = torch.linalg.vector_norm(original_id, dim=-1)
    norm_b = torch.linalg.vector_norm(translated_id, dim=-1)
    if bool((norm_a < 1e-8).any()) or bool((norm_b < 1e-8).any()):
        raise ZeroVector("identity basis rows must have norm >= 1e-8")
    cosine = (original_id * translated_id).sum(dim=-1) / (norm_a * norm_b)
    return (1.0 - cosine).mean()


def pixel_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel difference; used for both reconstruction and cycle terms."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    _check_nonempty(a)
    return ((a - b) ** 2).mean()
