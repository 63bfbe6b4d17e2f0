"""Core domain types for patch-based semantic novelty detection.

A *patch embedding* is a fixed-width feature vector describing one local
region of a 3D sample. Known-class samples contribute their patches to
per-class memory banks; the union of the (subsampled) banks is the
reference against which test samples are matched and scored.

Conventions enforced here:

* embedding scalars are stored as float32, score arithmetic runs in float64
* class ids are dense integers ``0..K-1``; ``UNKNOWN == -1`` marks samples
  outside the known-class set
* every type is immutable after construction, so instances can be shared
  freely across threads
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence

import numpy as np

UNKNOWN = -1

SCORE_NAMES = ("max", "mean", "entropy", "weighted_entropy", "nn_global")


def _frozen_f32(values, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float32, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def _check_id(value: int, name: str) -> int:
    value = int(value)
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return value


@dataclass(frozen=True, eq=False)
class PatchEmbedding:
    """One local-patch feature vector of a sample.

    ``anchor_point`` optionally carries the patch center (x, y, z) in model
    units; it is only needed for qualitative per-point exports.
    """

    values: np.ndarray
    patch_index: int
    sample_id: int
    anchor_point: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_f32(self.values, "values", 1))
        object.__setattr__(self, "patch_index", _check_id(self.patch_index, "patch_index"))
        object.__setattr__(self, "sample_id", _check_id(self.sample_id, "sample_id"))
        if self.anchor_point is not None:
            anchor = _frozen_f32(self.anchor_point, "anchor_point", 1)
            if anchor.shape != (3,):
                raise ValueError(f"anchor_point must have shape (3,), got {anchor.shape}")
            object.__setattr__(self, "anchor_point", anchor)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchEmbedding):
            return NotImplemented
        if (self.patch_index, self.sample_id) != (other.patch_index, other.sample_id):
            return False
        if not np.array_equal(self.values, other.values):
            return False
        if (self.anchor_point is None) != (other.anchor_point is None):
            return False
        return self.anchor_point is None or np.array_equal(self.anchor_point, other.anchor_point)


@dataclass(frozen=True, eq=False)
class SampleEmbeddingSet:
    """All patch embeddings of one point cloud, plus its evaluation label.

    Row ``k`` of ``features`` is patch ``k``; the per-patch view is exposed
    through :meth:`patches`. ``label`` is a known class id or ``UNKNOWN``.
    ``global_embedding`` (when present) is the backbone's pooled whole-sample
    feature used by the nearest-neighbor global baseline.
    """

    sample_id: int
    label: int
    features: np.ndarray = field(repr=False)
    anchors: np.ndarray | None = field(default=None, repr=False)
    global_embedding: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sample_id", _check_id(self.sample_id, "sample_id"))
        label = int(self.label)
        if label < UNKNOWN:
            raise ValueError(f"label must be a class id or UNKNOWN (-1), got {label}")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "features", _frozen_f32(self.features, "features", 2))
        if self.anchors is not None:
            anchors = _frozen_f32(self.anchors, "anchors", 2)
            if anchors.shape != (self.patch_count, 3):
                raise ValueError(
                    f"anchors must have shape ({self.patch_count}, 3), got {anchors.shape}"
                )
            object.__setattr__(self, "anchors", anchors)
        if self.global_embedding is not None:
            object.__setattr__(
                self, "global_embedding", _frozen_f32(self.global_embedding, "global_embedding", 1)
            )

    @classmethod
    def from_patches(
        cls,
        sample_id: int,
        label: int,
        patches: Sequence[PatchEmbedding],
        global_embedding: np.ndarray | None = None,
    ) -> "SampleEmbeddingSet":
        if not patches:
            raise ValueError("a sample needs at least one patch")
        indices = [p.patch_index for p in patches]
        if len(set(indices)) != len(indices):
            raise ValueError("patch_index values must be unique within a sample")
        ordered = sorted(patches, key=lambda p: p.patch_index)
        features = np.stack([p.values for p in ordered])
        with_anchor = [p.anchor_point is not None for p in ordered]
        if any(with_anchor) and not all(with_anchor):
            raise ValueError("either all patches carry an anchor point or none do")
        anchors = np.stack([p.anchor_point for p in ordered]) if all(with_anchor) else None
        return cls(sample_id, label, features, anchors, global_embedding)

    @property
    def patch_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_known(self) -> bool:
        return self.label != UNKNOWN

    def patches(self) -> Iterator[PatchEmbedding]:
        """Yield the per-patch view of the feature matrix."""
        for k in range(self.patch_count):
            anchor = self.anchors[k] if self.anchors is not None else None
            yield PatchEmbedding(self.features[k], k, self.sample_id, anchor)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleEmbeddingSet):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.label == other.label
            and np.array_equal(self.features, other.features)
            and _opt_equal(self.anchors, other.anchors)
            and _opt_equal(self.global_embedding, other.global_embedding)
        )


def _opt_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if (a is None) != (b is None):
        return False
    return a is None or np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class ClassMemoryBank:
    """Patch embeddings collected from the support samples of one class.

    ``provenance[i] == (sample_id, patch_index)`` records where bank row
    ``i`` came from; it survives coreset subselection unchanged.
    """

    class_id: int
    features: np.ndarray = field(repr=False)
    provenance: np.ndarray = field(repr=False)
    anchors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_id", _check_id(self.class_id, "class_id"))
        object.__setattr__(self, "features", _frozen_f32(self.features, "features", 2))
        prov = np.array(self.provenance, dtype=np.int64, copy=True)
        if prov.shape != (self.patch_count, 2):
            raise ValueError(
                f"provenance must have shape ({self.patch_count}, 2), got {prov.shape}"
            )
        if (prov < 0).any():
            raise ValueError("provenance entries must be non-negative")
        prov.flags.writeable = False
        object.__setattr__(self, "provenance", prov)
        if self.anchors is not None:
            anchors = _frozen_f32(self.anchors, "anchors", 2)
            if anchors.shape != (self.patch_count, 3):
                raise ValueError(
                    f"anchors must have shape ({self.patch_count}, 3), got {anchors.shape}"
                )
            object.__setattr__(self, "anchors", anchors)

    @property
    def patch_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def patches(self) -> Iterator[PatchEmbedding]:
        for i in range(self.patch_count):
            anchor = self.anchors[i] if self.anchors is not None else None
            yield PatchEmbedding(
                self.features[i], int(self.provenance[i, 1]), int(self.provenance[i, 0]), anchor
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassMemoryBank):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.provenance, other.provenance)
            and _opt_equal(self.anchors, other.anchors)
        )


@dataclass(frozen=True, eq=False)
class UnifiedBank:
    """Disjoint union of the per-class memory banks after subselection.

    Class ids must be the dense set ``0..K-1`` so that probability vectors
    can be indexed directly by class id.
    """

    banks: Mapping[int, ClassMemoryBank]
    dim: int
    metadata: Mapping[str, str]

    def __post_init__(self) -> None:
        if not self.banks:
            raise ValueError("a unified bank needs at least one class")
        keys = sorted(self.banks)
        if keys != list(range(len(keys))):
            raise ValueError(f"class ids must be dense 0..K-1, got {keys}")
        for class_id, bank in self.banks.items():
            if bank.class_id != class_id:
                raise ValueError(f"bank keyed {class_id} has class_id {bank.class_id}")
            if bank.dim != self.dim:
                raise ValueError(
                    f"class {class_id} has dim {bank.dim}, expected {self.dim}"
                )
        meta = {str(k): str(v) for k, v in self.metadata.items()}
        object.__setattr__(self, "banks", MappingProxyType(dict(sorted(self.banks.items()))))
        object.__setattr__(self, "metadata", MappingProxyType(meta))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def class_count(self) -> int:
        return len(self.banks)

    @property
    def total_patches(self) -> int:
        return sum(bank.patch_count for bank in self.banks.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UnifiedBank):
            return NotImplemented
        return (
            self.dim == other.dim
            and dict(self.metadata) == dict(other.metadata)
            and sorted(self.banks) == sorted(other.banks)
            and all(self.banks[k] == other.banks[k] for k in self.banks)
        )


@dataclass(frozen=True)
class MatchRecord:
    """Nearest-bank-neighbor result for one test patch."""

    patch_index: int
    distance: float
    assigned_class: int
    matched_provenance: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "distance", float(self.distance))
        if not np.isfinite(self.distance) or self.distance < 0:
            raise ValueError(f"distance must be finite and >= 0, got {self.distance}")
        _check_id(self.assigned_class, "assigned_class")
        object.__setattr__(
            self,
            "matched_provenance",
            (int(self.matched_provenance[0]), int(self.matched_provenance[1])),
        )


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Per-sample normality scores. Higher always means "more normal"."""

    sample_id: int
    class_probabilities: np.ndarray = field(repr=False)
    scores: Mapping[str, float]
    matches: tuple[MatchRecord, ...] = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sample_id", _check_id(self.sample_id, "sample_id"))
        probs = np.array(self.class_probabilities, dtype=np.float64, copy=True)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("class_probabilities must be a non-empty vector")
        if (probs < 0).any() or (probs > 1).any():
            raise ValueError("class probabilities must lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"class probabilities must sum to 1, got {probs.sum()!r}")
        probs.flags.writeable = False
        object.__setattr__(self, "class_probabilities", probs)
        scores = {str(k): float(v) for k, v in self.scores.items()}
        unknown_keys = set(scores) - set(SCORE_NAMES)
        if unknown_keys:
            raise ValueError(f"unknown score names: {sorted(unknown_keys)}")
        if "entropy" in scores:
            low = -float(np.log(probs.size)) - 1e-9
            if not (low <= scores["entropy"] <= 0.0):
                raise ValueError(f"entropy score {scores['entropy']} outside [{low}, 0]")
        object.__setattr__(self, "scores", MappingProxyType(scores))
        object.__setattr__(self, "matches", tuple(self.matches))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScoreReport):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and np.array_equal(self.class_probabilities, other.class_probabilities)
            and dict(self.scores) == dict(other.scores)
            and self.matches == other.matches
        )


def collect_class_banks(support: Sequence[SampleEmbeddingSet]) -> dict[int, ClassMemoryBank]:
    """Group every support patch into its per-class memory bank.

    Bank rows keep support order (sample order, then patch order). Anchors
    are carried only when every support sample provides them. Raises if a
    support sample is UNKNOWN-labeled or dimensions disagree.
    """
    if not support:
        raise ValueError("support set is empty")
    dim = support[0].dim
    per_class: dict[int, list[SampleEmbeddingSet]] = {}
    for sample in support:
        if sample.label == UNKNOWN:
            raise ValueError(f"support sample {sample.sample_id} is UNKNOWN-labeled")
        if sample.dim != dim:
            raise ValueError(f"sample {sample.sample_id} has dim {sample.dim}, expected {dim}")
        per_class.setdefault(sample.label, []).append(sample)
    keep_anchors = all(s.anchors is not None for s in support)
    banks: dict[int, ClassMemoryBank] = {}
    for class_id in sorted(per_class):
        samples = per_class[class_id]
        features = np.concatenate([s.features for s in samples])
        provenance = np.concatenate(
            [
                np.column_stack(
                    [np.full(s.patch_count, s.sample_id, dtype=np.int64),
                     np.arange(s.patch_count, dtype=np.int64)]
                )
                for s in samples
            ]
        )
        anchors = np.concatenate([s.anchors for s in samples]) if keep_anchors else None
        banks[class_id] = ClassMemoryBank(class_id, features, provenance, anchors)
    return banks
