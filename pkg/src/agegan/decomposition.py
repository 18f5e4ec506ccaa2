"""Polar split of pooled encoder features into an age magnitude and an identity direction.

A latent vector z factors as z = n * u where n = ||z||_2 is the scalar age
basis and u = z / ||z||_2 is the unit-norm identity basis. The split is
analytic, differentiable away from the origin, and exactly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateFeature

DEFAULT_EPSILON = 1e-8


@dataclass
class DecomposedFeature:
    """age_basis * identity_basis reconstructs the source latent.

    Shapes: for a (C,) latent, age_basis is a scalar tensor and identity_basis
    is (C,); for a (B, C) batch they are (B,) and (B, C).
    """

    age_basis: torch.Tensor
    identity_basis: torch.Tensor


def decompose(z: torch.Tensor, epsilon: float = DEFAULT_EPSILON,
              on_degenerate: str = "raise") -> DecomposedFeature:
    """Split a latent (or batch of latents) into magnitude and unit direction.

    on_degenerate: "raise" throws DegenerateFeature when any norm falls below
    epsilon; "clamp" divides by max(norm, epsilon) instead, which is what the
    training loop uses so a single collapsed batch cannot kill a run.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if on_degenerate not in ("raise", "clamp"):
        raise ValueError(f"on_degenerate must be 'raise' or 'clamp', got {on_degenerate!r}")
    norm = torch.linalg.vector_norm(z, dim=-1)
    if on_degenerate == "raise":
        if bool((norm < epsilon).any()):
            raise DegenerateFeature(
                f"latent norm below degeneracy threshold {epsilon:g} (min norm {float(norm.min()):g})")
        denom = norm
    else:
        denom = norm.clamp_min(epsilon)
    return DecomposedFeature(age_basis=norm, identity_basis=z / denom.unsqueeze(-1))


def recompose(d: DecomposedFeature) -> torch.Tensor:
    """Inverse of decompose: age_basis * identity_basis."""
    return d.age_basis.unsqueeze(-1) * d.identity_basis
