"""Sample-level normality scores from per-patch match records.

Every function returns a normality score: higher means more typical of the
known classes. Distance-style baselines are negated (not inverted) to keep
that orientation without dividing near zero. Logarithms are natural; any
base only rescales the entropy scores monotonically, leaving rank metrics
unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .banks import MatchRecord, SampleEmbeddingSet, ScoreReport
from .matching import BankIndex, match_patches

PATCH_FUNCTIONS = ("max", "mean", "entropy", "weighted_entropy")
ALL_FUNCTIONS = PATCH_FUNCTIONS + ("nn_global",)

# Flag/report-column spellings, in canonical column order.
SHORT_NAMES = {
    "max": "max",
    "mean": "mean",
    "entropy": "h",
    "weighted_entropy": "hw",
    "nn_global": "nn",
}
LONG_NAMES = {v: k for k, v in SHORT_NAMES.items()}


@dataclass(frozen=True)
class ScoringConfig:
    """Which scoring functions to evaluate per sample.

    ``support_globals`` (one pooled embedding per support sample) must be
    supplied when ``nn_global`` is requested. ``log_base`` is fixed at e;
    it is recorded here only so reports can state it.
    """

    functions: frozenset[str] = frozenset(PATCH_FUNCTIONS)
    support_globals: np.ndarray | None = field(default=None, repr=False, compare=False)
    log_base: float = math.e

    def __post_init__(self) -> None:
        functions = frozenset(self.functions)
        if not functions:
            raise ValueError("at least one scoring function must be selected")
        unknown = functions - set(ALL_FUNCTIONS)
        if unknown:
            raise ValueError(f"unknown scoring functions: {sorted(unknown)}")
        if self.log_base != math.e:
            raise ValueError("log_base is fixed to the natural logarithm")
        object.__setattr__(self, "functions", functions)
        if self.support_globals is not None:
            globals_ = np.array(self.support_globals, dtype=np.float64, copy=True)
            if globals_.ndim != 2 or globals_.shape[0] == 0:
                raise ValueError("support_globals must be a non-empty (n, G) matrix")
            if not np.isfinite(globals_).all():
                raise ValueError("support_globals contains NaN or Inf")
            globals_.flags.writeable = False
            object.__setattr__(self, "support_globals", globals_)

    @property
    def ordered_functions(self) -> tuple[str, ...]:
        return tuple(f for f in ALL_FUNCTIONS if f in self.functions)


def _distances(matches: Sequence[MatchRecord]) -> np.ndarray:
    if not matches:
        raise ValueError("no match records")
    return np.array([m.distance for m in matches], dtype=np.float64)


def _assigned(matches: Sequence[MatchRecord]) -> np.ndarray:
    return np.array([m.assigned_class for m in matches], dtype=np.int64)


def class_probabilities(matches: Sequence[MatchRecord], class_count: int) -> np.ndarray:
    """Fraction of patches assigned to each class; sums to one."""
    if not matches:
        raise ValueError("no match records")
    if class_count < 1:
        raise ValueError(f"class_count must be >= 1, got {class_count}")
    assigned = _assigned(matches)
    if assigned.max() >= class_count:
        raise ValueError(
            f"assigned class {assigned.max()} out of range for class_count {class_count}"
        )
    counts = np.bincount(assigned, minlength=class_count)
    return counts / float(len(matches))


def _log_assigned_probs(matches: Sequence[MatchRecord], probs: np.ndarray) -> np.ndarray:
    assigned = _assigned(matches)
    p = np.asarray(probs, dtype=np.float64)[assigned]
    # Each assigned class contributes to its own count, so p > 0 always.
    assert (p > 0).all(), "assignment probability of an assigned class cannot be 0"
    return np.log(p)


def score_entropy(matches: Sequence[MatchRecord], probs: np.ndarray) -> float:
    """Mean log-probability of the per-patch class assignments.

    Zero when every patch agrees on one class; -log(K) in the fully mixed
    equal-count case.
    """
    return float(np.mean(_log_assigned_probs(matches, probs)))


def score_weighted_entropy(matches: Sequence[MatchRecord], probs: np.ndarray) -> float:
    """Distance-weighted variant: mean of distance * log-probability."""
    logs = _log_assigned_probs(matches, probs)
    return float(np.mean(_distances(matches) * logs))


def score_max(matches: Sequence[MatchRecord]) -> float:
    """Negated worst patch distance."""
    return float(-_distances(matches).max())


def score_mean(matches: Sequence[MatchRecord]) -> float:
    """Negated mean patch distance."""
    return float(-_distances(matches).mean())


def score_nn_global(support_globals: np.ndarray, sample_global: np.ndarray) -> float:
    """Whole-sample baseline: negated distance to the closest support global."""
    if support_globals is None:
        raise ValueError("missing support global embeddings")
    if sample_global is None:
        raise ValueError("sample has no global embedding")
    bank = np.asarray(support_globals, dtype=np.float64)
    vec = np.asarray(sample_global, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] == 0:
        raise ValueError("support_globals must be a non-empty (n, G) matrix")
    if vec.shape != (bank.shape[1],):
        raise ValueError(
            f"global embedding has shape {vec.shape}, support has G={bank.shape[1]}"
        )
    diff = bank - vec
    d_sq = np.einsum("ij,ij->i", diff, diff)
    return float(-math.sqrt(max(d_sq.min(), 0.0)))


def score_sample(index: BankIndex, sample: SampleEmbeddingSet, cfg: ScoringConfig) -> ScoreReport:
    """Match one sample against the bank and evaluate the configured scores."""
    matches = match_patches(index, sample)
    probs = class_probabilities(matches, index.class_count)
    scores: dict[str, float] = {}
    for name in cfg.ordered_functions:
        if name == "max":
            scores[name] = score_max(matches)
        elif name == "mean":
            scores[name] = score_mean(matches)
        elif name == "entropy":
            scores[name] = score_entropy(matches, probs)
        elif name == "weighted_entropy":
            scores[name] = score_weighted_entropy(matches, probs)
        elif name == "nn_global":
            scores[name] = score_nn_global(cfg.support_globals, sample.global_embedding)
    return ScoreReport(sample.sample_id, probs, scores, tuple(matches))


def support_globals_matrix(support: Sequence[SampleEmbeddingSet]) -> np.ndarray:
    """Stack the global embeddings of a support set for the 1NN baseline."""
    missing = [s.sample_id for s in support if s.global_embedding is None]
    if missing:
        raise ValueError(f"support samples without global embeddings: {missing[:5]}")
    dims = {s.global_embedding.shape[0] for s in support}
    if len(dims) > 1:
        raise ValueError(f"support global embeddings disagree on G: {sorted(dims)}")
    return np.stack([s.global_embedding for s in support]).astype(np.float64)


def write_scores_tsv(
    samples: Sequence[SampleEmbeddingSet],
    reports: Sequence[ScoreReport],
    functions: Sequence[str],
    path: str | Path,
) -> None:
    """Write one tab-separated row per sample: sample_id, label, then one
    column per requested score in canonical order (max, mean, h, hw, nn).

    Floats are rendered with %.17g so values round-trip exactly.
    """
    ordered = [f for f in ALL_FUNCTIONS if f in set(functions)]
    header = ["sample_id", "label"] + [SHORT_NAMES[f] for f in ordered]
    lines = ["\t".join(header)]
    for sample, report in zip(samples, reports, strict=True):
        if sample.sample_id != report.sample_id:
            raise ValueError("samples and reports are misaligned")
        cells = [str(sample.sample_id), str(sample.label)]
        cells += [format(report.scores[f], ".17g") for f in ordered]
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores_tsv(path: str | Path) -> tuple[list[int], list[int], dict[str, np.ndarray]]:
    """Inverse of :func:`write_scores_tsv`; returns ids, labels, and score columns
    keyed by their short names."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty scores file")
    header = lines[0].split("\t")
    if header[:2] != ["sample_id", "label"]:
        raise ValueError(f"{path}: expected header starting with sample_id, label")
    score_names = header[2:]
    unknown = [name for name in score_names if name not in LONG_NAMES]
    if unknown:
        raise ValueError(f"{path}: unknown score columns {unknown}")
    ids: list[int] = []
    labels: list[int] = []
    columns: dict[str, list[float]] = {name: [] for name in score_names}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} columns")
        ids.append(int(cells[0]))
        labels.append(int(cells[1]))
        for name, cell in zip(score_names, cells[2:]):
            columns[name].append(float(cell))
    return ids, labels, {k: np.array(v, dtype=np.float64) for k, v in columns.items()}
