"""Exact nearest-neighbor matching of test patches against the unified bank.

Brute-force search is the contract: distances are computed blockwise as
``|a|^2 + |b|^2 - 2 a.b`` with float64 accumulation, clamped at zero before
the square root. The argmin per patch is exact and ties resolve to the
lowest bank row, so results are independent of block size or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .banks import MatchRecord, SampleEmbeddingSet, UnifiedBank

# Cap on distance-matrix entries held at once (~32 MB of float64).
_BLOCK_ENTRIES = 4_000_000


@dataclass(frozen=True, eq=False)
class BankIndex:
    """Flattened, query-ready view of a unified bank.

    Rows enumerate banks in ascending class id, preserving within-class
    order. ``features64`` and ``sq_norms`` are float64 caches for the
    distance accumulation.
    """

    features: np.ndarray = field(repr=False)
    class_ids: np.ndarray = field(repr=False)
    provenance: np.ndarray = field(repr=False)
    sq_norms: np.ndarray = field(repr=False)
    features64: np.ndarray = field(repr=False)
    class_count: int

    def __post_init__(self) -> None:
        for arr in (self.features, self.class_ids, self.provenance, self.sq_norms, self.features64):
            arr.flags.writeable = False

    @property
    def row_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def build_index(bank: UnifiedBank) -> BankIndex:
    """Flatten a unified bank into matrices for batched matching."""
    features = np.concatenate([bank.banks[y].features for y in sorted(bank.banks)])
    class_ids = np.concatenate(
        [
            np.full(bank.banks[y].patch_count, y, dtype=np.int32)
            for y in sorted(bank.banks)
        ]
    )
    provenance = np.concatenate([bank.banks[y].provenance for y in sorted(bank.banks)])
    features64 = features.astype(np.float64)
    sq_norms = np.einsum("ij,ij->i", features64, features64)
    return BankIndex(features, class_ids, provenance, sq_norms, features64, bank.class_count)


def nearest_rows(index: BankIndex, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest bank row per query vector.

    Returns (distances, row indices); distances are true Euclidean. Queries
    are processed in blocks sized to bound the distance-matrix footprint.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.dim:
        raise ValueError(
            f"queries must have shape (P, {index.dim}), got {np.shape(queries)}"
        )
    n_rows = index.row_count
    block = max(1, _BLOCK_ENTRIES // n_rows)
    distances = np.empty(q.shape[0], dtype=np.float64)
    rows = np.empty(q.shape[0], dtype=np.int64)
    for lo in range(0, q.shape[0], block):
        chunk = q[lo:lo + block]
        q_sq = np.einsum("ij,ij->i", chunk, chunk)
        d_sq = q_sq[:, None] + index.sq_norms[None, :] - 2.0 * (chunk @ index.features64.T)
        np.maximum(d_sq, 0.0, out=d_sq)
        arg = d_sq.argmin(axis=1)
        rows[lo:lo + block] = arg
        # re-derive the winning distances from direct differences: cheap
        # (one row per query) and free of the expansion's cancellation
        # residue, so an exact-duplicate patch reports exactly 0
        diff = chunk - index.features64[arg]
        distances[lo:lo + block] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return distances, rows


def match_patches(index: BankIndex, sample: SampleEmbeddingSet) -> list[MatchRecord]:
    """Per-patch nearest-neighbor distance and class assignment for a sample."""
    if sample.dim != index.dim:
        raise ValueError(f"sample has dim {sample.dim}, index has dim {index.dim}")
    distances, rows = nearest_rows(index, sample.features)
    return [
        MatchRecord(
            patch_index=k,
            distance=float(distances[k]),
            assigned_class=int(index.class_ids[rows[k]]),
            matched_provenance=(int(index.provenance[rows[k], 0]), int(index.provenance[rows[k], 1])),
        )
        for k in range(sample.patch_count)
    ]
