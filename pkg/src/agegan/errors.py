"""Exception types shared across the package."""


class DegenerateFeature(ValueError):
    """Latent norm fell below the degeneracy threshold (collapsed encoder output)."""


class ShapeMismatch(ValueError):
    """Tensor shape disagrees with the configured geometry."""


class EmptyBatch(ValueError):
    """A batch-averaged operation received zero samples."""


class InvalidLabel(IndexError):
    """Identity label outside the classifier's output range."""


class ZeroVector(ValueError):
    """A vector that must have positive norm is numerically zero."""


class ManifestParseError(ValueError):
    """Malformed manifest row; message carries the 1-based line number."""


class MissingImage(FileNotFoundError):
    """A manifest row references an image file that does not exist."""


class OutOfRangeAge(ValueError):
    """Age outside the dataset's [age_min, age_max] interval."""


class InvalidResolution(ValueError):
    """Unsupported image resolution."""


class UnknownConfigKey(ValueError):
    """Config file or override used a key that TrainingConfig does not define."""


class NonFiniteLoss(RuntimeError):
    """A loss term came out NaN/inf. Carries the per-term diagnostic dump."""

    def __init__(self, message: str, terms: dict | None = None):
        super().__init__(message)
        self.terms = dict(terms or {})


class CheckpointWriteError(OSError):
    """Failed to persist a checkpoint file."""


class EmptyTestSet(ValueError):
    """Evaluation asked to run over zero samples."""


class ClientFailure(RuntimeError):
    """A verifier client query failed."""


class NotToyImage(ClientFailure):
    """Image statistics are inconsistent with the synthetic toy rendering."""
