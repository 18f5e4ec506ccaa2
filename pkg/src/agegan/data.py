"""Dataset ingestion, age normalization, and the synthetic toy-face corpus.

Images live as float32 H x W x 3 numpy arrays in [-1, 1] on the data side;
the training loop converts to channel-first torch tensors. The toy corpus is a
procedural stand-in for a real face dataset: each identity is a fixed layout
of colored blobs, and "age" drives the radius of a central white disc plus a
global brightness ramp, both affine in age, so an analytic oracle can read the
age back off any rendered image.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import (EmptyBatch, InvalidResolution, ManifestParseError, MissingImage,
                     OutOfRangeAge)

MANIFEST_HEADER = ["path", "identity", "age"]


@dataclass
class AgeCondition:
    """A chronological age paired with its normalized [-1, 1] representation."""

    chronological: float
    normalized: float


@dataclass
class LabeledSample:
    """One image with its dense identity index and chronological age."""

    image: np.ndarray
    identity: int
    age: float


@dataclass
class ManifestEntry:
    """Lazy sample descriptor: the image stays on disk until loaded."""

    path: Path
    identity: int
    identity_key: str
    age: float


@dataclass
class DatasetStats:
    age_min: float
    age_max: float
    identity_count: int
    sample_count: int

    def __post_init__(self):
        if not self.age_min < self.age_max:
            raise ValueError(f"degenerate age range [{self.age_min}, {self.age_max}]")


# -- manifest ingestion ------------------------------------------------------

def load_manifest(path: str | Path):
    """Read a `path,identity,age` CSV; returns (entries, DatasetStats).

    Identity keys are strings mapped to dense indices in first-seen order.
    Referenced image files must exist, but pixels are not decoded here.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    identity_index: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestParseError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestParseError(
                f"{path} line 1: expected header {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ManifestParseError(f"{path} line {lineno}: expected 3 fields, got {len(row)}")
            rel_path, identity_key, age_text = (field.strip() for field in row)
            try:
                age = float(age_text)
            except ValueError:
                raise ManifestParseError(
                    f"{path} line {lineno}: age {age_text!r} is not a number") from None
            image_path = (path.parent / rel_path).resolve()
            if not image_path.exists():
                raise MissingImage(f"{path} line {lineno}: image not found: {image_path}")
            if identity_key not in identity_index:
                identity_index[identity_key] = len(identity_index)
            entries.append(ManifestEntry(path=image_path, identity=identity_index[identity_key],
                                         identity_key=identity_key, age=age))
    if not entries:
        raise ManifestParseError(f"{path}: manifest has no data rows")
    ages = [e.age for e in entries]
    stats = DatasetStats(age_min=min(ages), age_max=max(ages),
                         identity_count=len(identity_index), sample_count=len(entries))
    return entries, stats


def load_image(path: str | Path) -> np.ndarray:
    """Decode an 8-bit image file to float32 H x W x 3 in [-1, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 127.5 - 1.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a [-1, 1] float image as an 8-bit PNG/JPEG (by extension)."""
    arr = np.clip((np.asarray(image) + 1.0) * 127.5, 0.0, 255.0)
    Image.fromarray(np.round(arr).astype(np.uint8)).save(path)


def load_sample(entry: ManifestEntry) -> LabeledSample:
    if not entry.path.exists():
        raise MissingImage(str(entry.path))
    return LabeledSample(image=load_image(entry.path), identity=entry.identity, age=entry.age)


def load_samples(entries) -> list[LabeledSample]:
    return [load_sample(e) for e in entries]


def compute_stats(samples) -> DatasetStats:
    if not samples:
        raise EmptyBatch("cannot compute stats over zero samples")
    ages = [s.age for s in samples]
    identities = {s.identity for s in samples}
    return DatasetStats(age_min=min(ages), age_max=max(ages),
                        identity_count=len(identities), sample_count=len(samples))


# -- age bookkeeping ---------------------------------------------------------

def normalize_age(age: float, stats: DatasetStats) -> float:
    """Linear map with age_min -> -1 and age_max -> +1."""
    if not stats.age_min <= age <= stats.age_max:
        raise OutOfRangeAge(f"age {age} outside [{stats.age_min}, {stats.age_max}]")
    return 2.0 * (age - stats.age_min) / (stats.age_max - stats.age_min) - 1.0


def denormalize_age(value: float, stats: DatasetStats) -> float:
    return stats.age_min + (value + 1.0) * (stats.age_max - stats.age_min) / 2.0


def age_condition(age: float, stats: DatasetStats) -> AgeCondition:
    return AgeCondition(chronological=float(age), normalized=normalize_age(age, stats))


def normalize_ages(ages, stats: DatasetStats) -> torch.Tensor:
    """Vectorized normalize for tensors/arrays of in-range ages."""
    ages = torch.as_tensor(ages, dtype=torch.float32)
    return 2.0 * (ages - stats.age_min) / (stats.age_max - stats.age_min) - 1.0


def sample_target_age(rng: torch.Generator, stats: DatasetStats) -> AgeCondition:
    """One uniform draw over the dataset age range; deterministic under a seeded rng."""
    u = torch.rand((), generator=rng).item()
    age = stats.age_min + u * (stats.age_max - stats.age_min)
    return age_condition(age, stats)


def sample_target_ages(rng: torch.Generator, stats: DatasetStats, n: int) -> torch.Tensor:
    """n uniform chronological ages (years) as a float32 tensor."""
    u = torch.rand(n, generator=rng)
    return stats.age_min + u * (stats.age_max - stats.age_min)


# -- synthetic toy corpus ----------------------------------------------------

TOY_AGE_MIN = 16.0
TOY_AGE_MAX = 77.0


@dataclass
class ToyRenderSpec:
    """Construction constants of the toy renderer; the evaluation oracle inverts these."""

    resolution: int = 32
    age_min: float = TOY_AGE_MIN
    age_max: float = TOY_AGE_MAX
    radius_min: float = 3.0
    radius_max: float = 10.0
    base_floor: float = 0.15        # background min-channel value at age_min
    brightness_span: float = 0.15   # added to the floor linearly in age
    pattern_amp: float = 0.5        # peak amplitude of the identity blobs
    blob_count: int = 6

    def radius_for_age(self, age: float) -> float:
        t = (age - self.age_min) / (self.age_max - self.age_min)
        return self.radius_min + t * (self.radius_max - self.radius_min)

    def age_for_radius(self, radius: float) -> float:
        t = (radius - self.radius_min) / (self.radius_max - self.radius_min)
        return self.age_min + t * (self.age_max - self.age_min)

    def brightness_for_age(self, age: float) -> float:
        t = (age - self.age_min) / (self.age_max - self.age_min)
        return self.brightness_span * t


def toy_render_spec(resolution: int) -> ToyRenderSpec:
    if resolution not in (32, 64):
        raise InvalidResolution(f"toy corpus supports 32 or 64, got {resolution}")
    scale = resolution / 32.0
    return ToyRenderSpec(resolution=resolution, radius_min=3.0 * scale, radius_max=10.0 * scale)


def _distance_grid(resolution: int) -> np.ndarray:
    center = (resolution - 1) / 2.0
    coords = np.arange(resolution, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return np.sqrt((yy - center) ** 2 + (xx - center) ** 2)


def identity_pattern(seed: int, identity: int, spec: ToyRenderSpec) -> np.ndarray:
    """Fixed blob layout for one identity, H x W x 3 in [0, pattern_amp].

    The per-pixel minimum across channels is exactly zero, which lets the
    oracle cancel the age-driven brightness ramp by subtracting that minimum.
    """
    res = spec.resolution
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(identity)]))
    coords = np.arange(res, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    pattern = np.zeros((res, res, 3), dtype=np.float64)
    margin = res / 8.0
    for _ in range(spec.blob_count):
        cy, cx = rng.uniform(margin, res - 1 - margin, size=2)
        sigma = rng.uniform(0.06, 0.16) * res
        amps = rng.uniform(0.2, 1.0, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
        pattern += bump[:, :, None] * amps[None, None, :]
    pattern -= pattern.min(axis=2, keepdims=True)
    peak = pattern.max()
    if peak > 0:
        pattern *= spec.pattern_amp / peak
    return pattern


def render_toy_image(pattern: np.ndarray, age: float, spec: ToyRenderSpec) -> np.ndarray:
    """Deterministic render: blobs + brightness ramp + antialiased central disc."""
    if not spec.age_min <= age <= spec.age_max:
        raise OutOfRangeAge(f"age {age} outside [{spec.age_min}, {spec.age_max}]")
    dist = _distance_grid(spec.resolution)
    background = spec.base_floor + spec.brightness_for_age(age) + pattern
    alpha = np.clip(spec.radius_for_age(age) - dist + 0.5, 0.0, 1.0)[:, :, None]
    img01 = (1.0 - alpha) * background + alpha * 1.0
    return (2.0 * img01 - 1.0).astype(np.float32)


def generate_toy_corpus(seed: int, n_identities: int, samples_per_identity: int,
                        resolution: int) -> list[LabeledSample]:
    """Render n_identities x samples_per_identity labeled samples.

    Ages per identity are an even grid over [16, 77] including both endpoints,
    so the empirical dataset stats span the full construction range.
    """
    spec = toy_render_spec(resolution)
    if n_identities < 1 or samples_per_identity < 2:
        raise ValueError("need at least 1 identity and 2 samples per identity")
    ages = np.linspace(spec.age_min, spec.age_max, samples_per_identity)
    samples = []
    for identity in range(n_identities):
        pattern = identity_pattern(seed, identity, spec)
        for age in ages:
            samples.append(LabeledSample(image=render_toy_image(pattern, float(age), spec),
                                         identity=identity, age=float(age)))
    return samples


def materialize_corpus(samples, out_dir: str | Path) -> Path:
    """Write samples as PNGs plus a manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for i, sample in enumerate(samples):
            name = f"img_{i:05d}.png"
            save_image(image_dir / name, sample.image)
            writer.writerow([f"images/{name}", f"id{sample.identity:04d}", repr(sample.age)])
    return manifest_path


# -- batching ----------------------------------------------------------------

def epoch_batch_indices(n: int, batch_size: int, seed: int, shuffle: bool = True) -> list[np.ndarray]:
    """Index batches covering one epoch; the final partial batch is dropped."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    n_batches = n // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


def batch_iterator(samples, batch_size: int, seed: int, shuffle: bool = True):
    """Yield one epoch of sample batches in seed-deterministic order."""
    for idx in epoch_batch_indices(len(samples), batch_size, seed, shuffle):
        yield [samples[i] for i in idx]


def split_train_test(entries, test_fraction: float = 0.1, seed: int = 0):
    """Manifest-level 90:10 style split, deterministic under the seed."""
    order = np.random.default_rng(seed).permutation(len(entries))
    n_test = int(round(len(entries) * test_fraction))
    test_idx = set(order[:n_test].tolist())
    train = [e for i, e in enumerate(entries) if i not in test_idx]
    test = [e for i, e in enumerate(entries) if i in test_idx]
    return train, test
