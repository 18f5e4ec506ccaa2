"""Evaluation of age fidelity and identity preservation, plus aging strips.

Both evaluators query a pluggable verifier client. The bundled ToyOracle
inverts the synthetic renderer analytically: the central disc's area gives the
age through the known affine radius map, and identity is compared by the
correlation of the blob patterns with the disc region masked out. Real-data
evaluation requires a user-supplied client honoring the same interface.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .data import DatasetStats, ToyRenderSpec, _distance_grid, normalize_ages
from .decomposition import decompose
from .errors import ClientFailure, EmptyTestSet, NotToyImage, OutOfRangeAge
from .networks import NetworkBundle


class VerifierClient(Protocol):
    """Pure queries against an external age estimator / face verifier."""

    def estimate_age(self, image: np.ndarray) -> float: ...

    def verify(self, image_a: np.ndarray, image_b: np.ndarray) -> float: ...


@dataclass(frozen=True)
class AgeGroup:
    label: str
    low: float
    high: float
    target_age: float


def default_age_groups() -> list[AgeGroup]:
    """The four decade-style groups; targets are group midpoints (60 for the
    open-ended 50+ group), an interpretation knob rather than a given."""
    return [
        AgeGroup("21-30", 21.0, 30.0, 25.5),
        AgeGroup("31-40", 31.0, 40.0, 35.5),
        AgeGroup("41-50", 41.0, 50.0, 45.5),
        AgeGroup("50+", 50.0, 77.0, 60.0),
    ]


@dataclass
class AgeRecord:
    group: str | None
    target_age: float
    estimated_age: float | None


@dataclass
class AgeEvalReport:
    group_means: dict[str, float]
    mean_abs_error: float
    records: list[AgeRecord] = field(default_factory=list)
    missing: int = 0


@dataclass
class VerificationReport:
    confidence: dict[tuple[str, str], float]
    rates: dict[str, float]
    threshold: float
    missing: int = 0


# -- generator-side helpers ---------------------------------------------------

def _to_torch(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.astype(np.float32))).permute(2, 0, 1).unsqueeze(0)


def _to_numpy(batch: torch.Tensor) -> np.ndarray:
    return batch.squeeze(0).permute(1, 2, 0).numpy()


def translate_image(bundle: NetworkBundle, image: np.ndarray, age: float,
                    stats: DatasetStats) -> np.ndarray:
    """Translate one H x W x 3 image to a chronological target age."""
    if not stats.age_min <= age <= stats.age_max:
        raise OutOfRangeAge(f"age {age} outside [{stats.age_min}, {stats.age_max}]")
    with torch.no_grad():
        out = bundle.translate(_to_torch(image), normalize_ages([age], stats))
    return _to_numpy(out)


def generate_aging_strip(bundle: NetworkBundle, image: np.ndarray, ages,
                         stats: DatasetStats) -> list[np.ndarray]:
    """One translation per target age, all from a single encoding of the input."""
    ages = [float(a) for a in ages]
    if any(b <= a for a, b in zip(ages, ages[1:])):
        raise ValueError("ages must be strictly increasing")
    for a in ages:
        if not stats.age_min <= a <= stats.age_max:
            raise OutOfRangeAge(f"age {a} outside [{stats.age_min}, {stats.age_max}]")
    with torch.no_grad():
        latent, skips = bundle.encode_generator(_to_torch(image))
        identity = decompose(latent, on_degenerate="clamp").identity_basis
        frames = [bundle.decode(identity, normalize_ages([a], stats), skips) for a in ages]
    return [_to_numpy(f) for f in frames]


# -- evaluators ---------------------------------------------------------------

def _query(call, *args, retries: int = 2):
    """Run a client query with transient-failure retries; None means missing."""
    for attempt in range(retries + 1):
        try:
            return call(*args)
        except ClientFailure:
            if attempt == retries:
                return None
            time.sleep(0.0)
    return None


def evaluate_age_fidelity(bundle: NetworkBundle, samples, groups, client: VerifierClient,
                          stats: DatasetStats, *, seed: int = 0, retries: int = 2) -> AgeEvalReport:
    """Estimated-age report: translate every sample to each group's target age
    for the per-group means, and to one uniformly sampled exact age per sample
    for the continuous absolute error."""
    samples = list(samples)
    if not samples:
        raise EmptyTestSet("age fidelity evaluation needs at least one sample")
    records: list[AgeRecord] = []
    missing = 0

    group_means = {}
    for group in groups:
        estimates = []
        for sample in samples:
            fake = translate_image(bundle, sample.image, group.target_age, stats)
            est = _query(client.estimate_age, fake, retries=retries)
            records.append(AgeRecord(group=group.label, target_age=group.target_age,
                                     estimated_age=est))
            if est is None:
                missing += 1
            else:
                estimates.append(est)
        group_means[group.label] = float(np.mean(estimates)) if estimates else float("nan")

    rng = np.random.default_rng(seed)
    errors = []
    for sample in samples:
        target = float(rng.uniform(stats.age_min, stats.age_max))
        fake = translate_image(bundle, sample.image, target, stats)
        est = _query(client.estimate_age, fake, retries=retries)
        records.append(AgeRecord(group=None, target_age=target, estimated_age=est))
        if est is None:
            missing += 1
        else:
            errors.append(abs(target - est))
    mean_abs_error = float(np.mean(errors)) if errors else float("nan")
    return AgeEvalReport(group_means=group_means, mean_abs_error=mean_abs_error,
                         records=records, missing=missing)


def _source_group(age: float, groups) -> AgeGroup | None:
    for group in groups:
        if group.low <= age <= group.high:
            return group
    return None


def evaluate_identity_preservation(bundle: NetworkBundle, samples, groups,
                                   client: VerifierClient, stats: DatasetStats,
                                   threshold: float, *, retries: int = 2) -> VerificationReport:
    """Confidence matrix over (source group, target group) plus per-target
    verification rates; a pair counts positive iff confidence >= threshold."""
    samples = list(samples)
    if not samples:
        raise EmptyTestSet("identity preservation evaluation needs at least one sample")
    confidences: dict[tuple[str, str], list[float]] = {}
    per_target: dict[str, list[bool]] = {g.label: [] for g in groups}
    missing = 0
    for sample in samples:
        source = _source_group(sample.age, groups)
        if source is None:
            continue
        for target in groups:
            fake = translate_image(bundle, sample.image, target.target_age, stats)
            conf = _query(client.verify, sample.image, fake, retries=retries)
            if conf is None:
                missing += 1
                continue
            confidences.setdefault((source.label, target.label), []).append(conf)
            per_target[target.label].append(conf >= threshold)
    matrix = {key: float(np.mean(vals)) for key, vals in confidences.items()}
    rates = {label: (100.0 * float(np.mean(flags)) if flags else float("nan"))
             for label, flags in per_target.items()}
    return VerificationReport(confidence=matrix, rates=rates, threshold=threshold,
                              missing=missing)


# -- the bundled toy oracle ---------------------------------------------------

class ToyOracle:
    """Analytic stand-in for a commercial face API, valid only for toy renders.

    estimate_age: recovers the disc's antialiased coverage from the
    min-channel image (the construction keeps the background's min-channel
    spatially constant), then solves coverage(radius) = measured coverage by
    bisection and maps radius back to years.

    verify: correlation of the two blob patterns (min-channel subtracted,
    disc region masked out, mean-centered), scaled to [0, 100].
    """

    def __init__(self, render: ToyRenderSpec):
        self.render = render
        self._dist = _distance_grid(render.resolution)
        self._outer = self._dist >= render.radius_max + 2.0
        self._core = self._dist <= max(render.radius_min - 1.5, 1.0)
        self._disc_region = self._dist <= render.radius_max + 1.5

    # -- client interface --

    def estimate_age(self, image: np.ndarray) -> float:
        radius = self._disc_radius(image)
        age = self.render.age_for_radius(radius)
        return float(np.clip(age, self.render.age_min, self.render.age_max))

    def verify(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        pattern_a, radius_a = self._pattern(image_a)
        pattern_b, radius_b = self._pattern(image_b)
        mask = self._dist > max(radius_a, radius_b) + 1.0
        fa = pattern_a[mask].ravel().astype(np.float64)
        fb = pattern_b[mask].ravel().astype(np.float64)
        fa -= fa.mean()
        fb -= fb.mean()
        denom = np.linalg.norm(fa) * np.linalg.norm(fb)
        if denom < 1e-12:
            return 0.0
        return float(100.0 * max(0.0, float(np.dot(fa, fb) / denom)))

    # -- internals --

    def _validate(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        res = self.render.resolution
        if image.shape != (res, res, 3):
            raise NotToyImage(f"expected ({res}, {res}, 3) image, got {image.shape}")
        if not np.isfinite(image).all():
            raise NotToyImage("image contains non-finite values")
        if image.min() < -1.001 or image.max() > 1.001:
            raise NotToyImage("pixel values leave the [-1, 1] display range")
        return (image.astype(np.float64) + 1.0) / 2.0

    def _whiteness(self, image: np.ndarray) -> tuple[np.ndarray, float]:
        v01 = self._validate(image)
        w = v01.min(axis=2)
        floor = float(np.median(w[self._outer]))
        core = float(w[self._core].mean())
        if floor > 0.55 or core < 0.65 or core - floor < 0.25:
            raise NotToyImage(
                f"statistics inconsistent with a toy render (core={core:.3f}, floor={floor:.3f})")
        return w, floor

    def _disc_radius(self, image: np.ndarray) -> float:
        w, floor = self._whiteness(image)
        coverage = np.clip((w - floor) / (1.0 - floor), 0.0, 1.0)
        area = float(coverage[self._disc_region].sum())
        return _radius_from_coverage(area, self._dist, self.render)

    def _pattern(self, image: np.ndarray) -> tuple[np.ndarray, float]:
        radius = self._disc_radius(image)
        v01 = self._validate(image)
        pattern = v01 - v01.min(axis=2, keepdims=True)
        return pattern, radius


def _radius_from_coverage(area: float, dist: np.ndarray, render: ToyRenderSpec) -> float:
    """Invert the renderer's coverage model: sum of clip(r - d + 0.5, 0, 1)
    over the pixel grid is strictly increasing in r, so bisection is exact."""
    lo, hi = 0.0, render.radius_max + 2.0
    flat = dist.ravel()

    def coverage(r: float) -> float:
        return float(np.clip(r - flat + 0.5, 0.0, 1.0).sum())

    if area <= coverage(lo):
        return lo
    if area >= coverage(hi):
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if coverage(mid) < area:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def internal_oracle(render: ToyRenderSpec) -> ToyOracle:
    """The bundled VerifierClient for synthetic corpora."""
    return ToyOracle(render)


# -- disk cache for client calls ----------------------------------------------

class DiskCachedClient:
    """Wraps any VerifierClient with an on-disk cache keyed by image hash, so
    long evaluations are resumable and every external call is auditable."""

    def __init__(self, inner: VerifierClient, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _image_hash(image: np.ndarray) -> str:
        return hashlib.sha256(np.ascontiguousarray(image, dtype=np.float32).tobytes()).hexdigest()

    def _lookup(self, key: str):
        path = self.cache_dir / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["value"]
        return None

    def _store(self, key: str, value: float) -> None:
        (self.cache_dir / f"{key}.json").write_text(json.dumps({"value": value}), encoding="utf-8")

    def estimate_age(self, image: np.ndarray) -> float:
        key = f"age-{self._image_hash(image)}"
        cached = self._lookup(key)
        if cached is None:
            cached = float(self.inner.estimate_age(image))
            self._store(key, cached)
        return cached

    def verify(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        key = f"verify-{self._image_hash(image_a)}-{self._image_hash(image_b)}"
        cached = self._lookup(key)
        if cached is None:
            cached = float(self.inner.verify(image_a, image_b))
            self._store(key, cached)
        return cached


# -- report emission ------------------------------------------------------------

def write_age_report(report: AgeEvalReport, csv_path: str | Path, text_path: str | Path) -> None:
    labels = list(report.group_means)
    lines = ["group,mean_estimated_age", *(f"{g},{report.group_means[g]}" for g in labels),
             f"mean_abs_error,{report.mean_abs_error}"]
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    width = max(12, *(len(g) for g in labels)) + 2
    header = "".join(g.rjust(width) for g in labels)
    means = "".join(f"{report.group_means[g]:{width}.2f}" for g in labels)
    text = ("Estimated age by target group\n"
            f"{'':12s}{header}\n{'mean':12s}{means}\n\n"
            f"Mean absolute age error: {report.mean_abs_error:.2f} years "
            f"({report.missing} missing estimates)\n")
    Path(text_path).write_text(text, encoding="utf-8")


def write_verification_report(report: VerificationReport, csv_path: str | Path,
                              text_path: str | Path) -> None:
    sources = sorted({s for s, _ in report.confidence})
    targets = list(report.rates)
    rows = ["source,target,confidence"]
    rows += [f"{s},{t},{report.confidence[(s, t)]}" for s in sources for t in targets
             if (s, t) in report.confidence]
    rows += [f"rate,{t},{report.rates[t]}" for t in targets]
    Path(csv_path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    width = max(10, *(len(t) for t in targets)) + 2
    lines = ["Verification confidence (%)",
             "source".ljust(12) + "".join(t.rjust(width) for t in targets)]
    for s in sources:
        cells = "".join(
            f"{report.confidence.get((s, t), float('nan')):{width}.2f}" for t in targets)
        lines.append(s.ljust(12) + cells)
    lines.append("")
    lines.append(f"Verification rate (%) at threshold {report.threshold}")
    lines.append("rate".ljust(12) + "".join(f"{report.rates[t]:{width}.2f}" for t in targets))
    Path(text_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
