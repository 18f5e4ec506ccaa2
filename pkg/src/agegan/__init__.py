"""Continuous-age face translation: polar latent decomposition, adversarial
training, and oracle-backed evaluation."""

from .config import TrainingConfig
from .data import (AgeCondition, DatasetStats, LabeledSample, generate_toy_corpus,
                   load_manifest, normalize_age, denormalize_age)
from .decomposition import DecomposedFeature, decompose, recompose
from .losses import LossReport, LossWeights
from .networks import NetworkBundle, build_bundle, load_checkpoint, save_checkpoint
from .training import TrainingState, train
from .evaluation import (AgeEvalReport, VerificationReport, evaluate_age_fidelity,
                         evaluate_identity_preservation, generate_aging_strip,
                         internal_oracle)

__version__ = "0.1.0"

__all__ = [
    "AgeCondition", "AgeEvalReport", "DatasetStats", "DecomposedFeature", "LabeledSample",
    "LossReport", "LossWeights", "NetworkBundle", "TrainingConfig", "TrainingState",
    "VerificationReport", "build_bundle", "decompose", "denormalize_age",
    "evaluate_age_fidelity", "evaluate_identity_preservation", "generate_aging_strip",
    "generate_toy_corpus", "internal_oracle", "load_checkpoint", "load_manifest",
    "normalize_age", "recompose", "save_checkpoint", "train",
]
