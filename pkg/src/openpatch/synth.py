"""Seeded synthetic embedding sets for end-to-end testing and benchmarks.

Known classes are Gaussian patch clouds around well-separated centers on a
sphere of radius ``class_center_spread``. Three out-of-distribution sample
families cover the qualitatively different novelty regimes:

* ``mixture``: patches drawn from two distinct known centers, so distances
  look nominal but class assignments mix. Only assignment-aware scores can
  separate these from knowns.
* ``shifted``: patches clustered far away, equidistant from two known
  centers (the fresh center sits on the scaled midpoint direction), so both
  distances and assignment entropy flag them.
* ``concentrated_far``: patches around a single known center pushed
  radially outward. Assignments stay unanimous, so only distance-based
  scores react; this is the known blind spot of assignment entropy.

Generation is fully deterministic in the seed: one generator, fixed
consumption order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .banks import UNKNOWN, SampleEmbeddingSet

OOD_MODES = ("mixture", "shifted", "concentrated_far")

# Resample a center direction when it aligns this much with an earlier one;
# keeps the radial "concentrated_far" displacement unambiguous.
_MAX_CENTER_COS = 0.8


@dataclass(frozen=True)
class SynthConfig:
    class_count: int = 5
    dim: int = 16
    patches_per_sample: int = 20
    samples_per_class: int = 50
    class_center_spread: float = 20.0
    within_class_noise: float = 1.0
    ood_mode: str = "mixture"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("class_count", "dim", "patches_per_sample", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.class_center_spread <= 0 or self.within_class_noise < 0:
            raise ValueError("class_center_spread must be > 0 and within_class_noise >= 0")
        if self.ood_mode not in OOD_MODES:
            raise ValueError(f"ood_mode must be one of {OOD_MODES}, got {self.ood_mode!r}")
        if self.ood_mode in ("mixture", "shifted") and self.class_count < 2:
            raise ValueError(f"{self.ood_mode} needs at least 2 classes")
        if self.ood_mode == "mixture" and self.patches_per_sample < 2:
            raise ValueError("mixture needs at least 2 patches per sample")


def class_names(cfg: SynthConfig) -> dict[int, str]:
    return {i: f"class_{i}" for i in range(cfg.class_count)}


def _class_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((cfg.class_count, cfg.dim))
    count = 0
    while count < cfg.class_count:
        direction = rng.standard_normal(cfg.dim)
        direction /= np.linalg.norm(direction)
        if count and (centers[:count] @ direction).max() / cfg.class_center_spread > _MAX_CENTER_COS:
            continue
        centers[count] = direction * cfg.class_center_spread
        count += 1
    return centers


def _make_sample(
    cfg: SynthConfig,
    rng: np.random.Generator,
    sample_id: int,
    label: int,
    patch_centers: np.ndarray,
) -> SampleEmbeddingSet:
    noise = rng.standard_normal((cfg.patches_per_sample, cfg.dim)) * cfg.within_class_noise
    features = (patch_centers + noise).astype(np.float32)
    anchors = rng.random((cfg.patches_per_sample, 3)).astype(np.float32)
    pooled = np.mean(features, axis=0, dtype=np.float64).astype(np.float32)
    return SampleEmbeddingSet(sample_id, label, features, anchors, pooled)


def _ood_patch_centers(cfg: SynthConfig, rng: np.random.Generator, centers: np.ndarray) -> np.ndarray:
    p = cfg.patches_per_sample
    if cfg.ood_mode == "mixture":
        a, b = rng.choice(cfg.class_count, size=2, replace=False)
        sources = np.where(rng.random(p) < 0.5, a, b)
        sources[0], sources[1] = a, b  # guarantee a real mixture even at zero noise
        return centers[sources]
    if cfg.ood_mode == "shifted":
        a, b = rng.choice(cfg.class_count, size=2, replace=False)
        midpoint = (centers[a] + centers[b]) / 2.0
        fresh = midpoint / np.linalg.norm(midpoint) * (2.0 * cfg.class_center_spread)
        return np.broadcast_to(fresh, (p, cfg.dim))
    # concentrated_far: one known center pushed radially outward
    y = int(rng.integers(cfg.class_count))
    return np.broadcast_to(centers[y] * 3.0, (p, cfg.dim))


def generate(cfg: SynthConfig) -> tuple[list[SampleEmbeddingSet], list[SampleEmbeddingSet]]:
    """Build (support, test) lists of embedding sets.

    The support set holds ``samples_per_class`` samples per class. The test
    set holds the same number of fresh known samples per class plus
    ``class_count * samples_per_class`` UNKNOWN-labeled samples of the
    configured OOD family, so both evaluation populations are balanced.
    """
    rng = np.random.default_rng(cfg.seed)
    centers = _class_centers(cfg, rng)
    next_id = 0
    support: list[SampleEmbeddingSet] = []
    for class_id in range(cfg.class_count):
        patch_centers = np.broadcast_to(centers[class_id], (cfg.patches_per_sample, cfg.dim))
        for _ in range(cfg.samples_per_class):
            support.append(_make_sample(cfg, rng, next_id, class_id, patch_centers))
            next_id += 1
    test: list[SampleEmbeddingSet] = []
    for class_id in range(cfg.class_count):
        patch_centers = np.broadcast_to(centers[class_id], (cfg.patches_per_sample, cfg.dim))
        for _ in range(cfg.samples_per_class):
            test.append(_make_sample(cfg, rng, next_id, class_id, patch_centers))
            next_id += 1
    for _ in range(cfg.class_count * cfg.samples_per_class):
        patch_centers = _ood_patch_centers(cfg, rng, centers)
        test.append(_make_sample(cfg, rng, next_id, UNKNOWN, patch_centers))
        next_id += 1
    return support, test
