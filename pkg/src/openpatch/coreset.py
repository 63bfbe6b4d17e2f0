"""Greedy farthest-point (k-center) subselection of class memory banks.

Selection runs independently per class: the first center is drawn
uniformly with the configured seed, every later center is the candidate
whose minimum distance to the current selection is largest. Ties pick the
lowest bank index, so a selection is fully determined by (bank order,
seed). Min-distance bookkeeping is incremental: one O(n) pass per pick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .banks import ClassMemoryBank, SampleEmbeddingSet, UnifiedBank, collect_class_banks

# Default keep ratio sits at the ablation-stable point: a bank reduced to
# one fifth behaves like the full bank.
DEFAULT_KEEP_RATIO = 0.2


@dataclass(frozen=True)
class CoresetConfig:
    keep_ratio: float = DEFAULT_KEEP_RATIO
    seed: int = 0
    projection_dim: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.keep_ratio <= 1.0):
            raise ValueError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ValueError(f"projection_dim must be >= 1, got {self.projection_dim}")


def target_size(keep_ratio: float, n: int) -> int:
    """ceil(keep_ratio * n), guarded against float noise like 0.2*100 -> 20.000...004."""
    if not (0.0 < keep_ratio <= 1.0):
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    m = math.ceil(keep_ratio * n - 1e-9)
    return min(max(m, 1), n)


def _points_2d(points: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (n, C) matrix")
    return arr


def greedy_farthest_point(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Return the indices of m greedily chosen centers, in selection order.

    Works on squared distances (the argmax is the same); already-selected
    rows are masked with -1 so duplicate points can never be re-picked.
    """
    pts = _points_2d(points, "points")
    n = pts.shape[0]
    if not (1 <= m <= n):
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not (0 <= start < n):
        raise ValueError(f"start must be in [0, {n}), got {start}")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    diff = pts - pts[start]
    min_sq = np.einsum("ij,ij->i", diff, diff)
    min_sq[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))
        selected[i] = nxt
        diff = pts - pts[nxt]
        np.minimum(min_sq, np.einsum("ij,ij->i", diff, diff), out=min_sq)
        min_sq[nxt] = -1.0
    return selected


def select_coreset(bank: ClassMemoryBank, cfg: CoresetConfig) -> ClassMemoryBank:
    """Reduce one class bank to ceil(keep_ratio * n) greedily spread patches.

    With ``projection_dim`` set, candidate distances are computed in a
    random Gaussian projection (drawn from the same seed); that mode trades
    exactness for speed and may select different patches than full-dimension
    mode, which is the reference behavior.
    """
    n = bank.patch_count
    m = target_size(cfg.keep_ratio, n)
    rng = np.random.default_rng(cfg.seed)
    start = int(rng.integers(n))
    work = bank.features.astype(np.float64)
    if cfg.projection_dim is not None and cfg.projection_dim < bank.dim:
        proj = rng.standard_normal((bank.dim, cfg.projection_dim)) / math.sqrt(cfg.projection_dim)
        work = work @ proj
    idx = greedy_farthest_point(work, m, start)
    return ClassMemoryBank(
        bank.class_id,
        bank.features[idx],
        bank.provenance[idx],
        bank.anchors[idx] if bank.anchors is not None else None,
    )


def coverage_radius(selected: np.ndarray, full: np.ndarray) -> float:
    """Max over full points of the distance to the nearest selected point.

    ``selected`` is expected to be a subset of ``full``; 1-D inputs are
    treated as n points on the line.
    """
    sel = _points_2d(selected, "selected")
    pts = _points_2d(full, "full")
    if sel.shape[1] != pts.shape[1]:
        raise ValueError(f"dimension mismatch: {sel.shape[1]} vs {pts.shape[1]}")
    # direct differences (not the norm expansion): a selected point must
    # cover itself at exactly 0, with no cancellation residue
    block = max(1, 4_000_000 // (sel.shape[0] * sel.shape[1]))
    worst = 0.0
    for lo in range(0, pts.shape[0], block):
        chunk = pts[lo:lo + block]
        d_sq = ((chunk[:, None, :] - sel[None, :, :]) ** 2).sum(axis=2)
        worst = max(worst, float(d_sq.min(axis=1).max()))
    return math.sqrt(worst)


def build_unified_bank(
    support: Sequence[SampleEmbeddingSet],
    cfg: CoresetConfig,
    metadata: Mapping[str, str] | None = None,
) -> UnifiedBank:
    """Group support patches per class, subselect each bank, and unify.

    Per-class selections share the configured seed but depend only on their
    own class bank, so dropping or adding a class never changes the others.
    """
    full_banks = collect_class_banks(support)
    reduced = {y: select_coreset(b, cfg) for y, b in sorted(full_banks.items())}
    meta = {
        "backbone": "none",
        "extraction_layer": "none",
        "keep_ratio": repr(cfg.keep_ratio),
        "seed": str(cfg.seed),
    }
    if cfg.projection_dim is not None:
        meta["projection_dim"] = str(cfg.projection_dim)
    if metadata:
        meta.update({str(k): str(v) for k, v in metadata.items()})
    dim = next(iter(reduced.values())).dim
    return UnifiedBank(reduced, dim, meta)
