"""Deterministic point-cloud primitives shared by all backbones."""

from __future__ import annotations

import numpy as np
import torch

# One fixed seed for per-cloud resampling: two byte-identical clouds must
# yield byte-identical subsets regardless of their position in the dataset.
_SAMPLING_SEED = 0x9E3779B9


def resample_points(points: np.ndarray, count: int) -> np.ndarray:
    """Uniformly subsample (or pad by resampling) a cloud to ``count`` points."""
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got {points.shape}")
    n = points.shape[0]
    rng = np.random.default_rng(_SAMPLING_SEED)
    if n >= count:
        idx = np.sort(rng.choice(n, size=count, replace=False))
    else:
        idx = np.sort(rng.choice(n, size=count, replace=True))
    return points[idx]


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale into the unit sphere."""
    centered = points - points.mean(axis=0, keepdims=True)
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale > 0:
        centered = centered / scale
    return centered.astype(np.float32)


def farthest_point_indices(points: torch.Tensor, count: int) -> torch.Tensor:
    """Greedy farthest-point traversal starting at index 0."""
    n = points.shape[0]
    if count > n:
        raise ValueError(f"cannot pick {count} centers from {n} points")
    chosen = torch.empty(count, dtype=torch.long)
    chosen[0] = 0
    min_sq = ((points - points[0]) ** 2).sum(dim=1)
    for i in range(1, count):
        nxt = int(torch.argmax(min_sq))
        chosen[i] = nxt
        min_sq = torch.minimum(min_sq, ((points - points[nxt]) ** 2).sum(dim=1))
    return chosen


def knn_indices(points: torch.Tensor, centers: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k nearest source points per center, shape (P, k)."""
    d_sq = torch.cdist(centers, points, p=2.0)
    return torch.topk(d_sq, k=min(k, points.shape[0]), largest=False).indices
