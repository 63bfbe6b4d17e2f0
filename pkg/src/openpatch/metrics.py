"""Threshold-free evaluation of normality scores: AUROC, FPR95, few-shot.

AUROC here is the Mann-Whitney statistic: the probability that a known
sample scores above an unknown one, ties counted half. The sort-based path
uses fractional midranks, whose sums stay exact in float64, so it equals
the pairwise definition bit for bit.

FPR95 uses the decision rule "score >= tau means known" with tau the
largest threshold reaching a true positive rate of at least 95%; ties at
tau count as accepted. That is the most conservative false positive rate
consistent with the guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._parallel import parallel_map
from .banks import UNKNOWN, SampleEmbeddingSet
from .coreset import CoresetConfig, build_unified_bank
from .matching import BankIndex, build_index
from .scoring import ScoringConfig, score_sample, support_globals_matrix

# TPR target as an exact rational so the accept count never suffers from
# 0.95 * n float rounding (e.g. 0.95 * 20 != 19 in binary).
_TPR_NUM, _TPR_DEN = 19, 20


def _scores_1d(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D score list")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains a non-finite score")
    return arr


def auroc(scores_known, scores_unknown) -> float:
    """P(known > unknown) + 0.5 P(known == unknown), via midranks."""
    known = _scores_1d(scores_known, "scores_known")
    unknown = _scores_1d(scores_unknown, "scores_unknown")
    n_k, n_u = known.size, unknown.size
    merged = np.concatenate([known, unknown])
    order = np.argsort(merged, kind="stable")
    sorted_scores = merged[order]
    ranks = np.empty(merged.size, dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [merged.size]])
    # a tie run occupying 1-based ranks lo+1 .. hi gets midrank (lo+1+hi)/2
    ranks[order] = np.repeat((starts + 1 + ends) / 2.0, ends - starts)
    rank_sum_known = float(ranks[:n_k].sum())
    u_stat = rank_sum_known - n_k * (n_k + 1) / 2.0
    return u_stat / (n_k * n_u)


def fpr95(scores_known, scores_unknown) -> float:
    """False positive rate at the largest threshold with TPR >= 0.95."""
    known = _scores_1d(scores_known, "scores_known")
    unknown = _scores_1d(scores_unknown, "scores_unknown")
    need = -((-_TPR_NUM * known.size) // _TPR_DEN)  # ceil(0.95 * n_known)
    tau = np.sort(known)[known.size - need]
    return float(np.count_nonzero(unknown >= tau) / unknown.size)


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    fpr95: float
    n_known: int
    n_unknown: int

    def __post_init__(self) -> None:
        if self.n_known < 1 or self.n_unknown < 1:
            raise ValueError("both populations must be non-empty")


def evaluate_scores(scores_known, scores_unknown) -> EvalReport:
    known = _scores_1d(scores_known, "scores_known")
    unknown = _scores_1d(scores_unknown, "scores_unknown")
    return EvalReport(
        auroc=auroc(known, unknown),
        fpr95=fpr95(known, unknown),
        n_known=known.size,
        n_unknown=unknown.size,
    )


def evaluate_pipeline(
    index: BankIndex,
    test: Sequence[SampleEmbeddingSet],
    cfg: ScoringConfig,
) -> dict[str, EvalReport]:
    """Score every test sample and report AUROC/FPR95 per scoring function."""
    reports = parallel_map(lambda s: score_sample(index, s, cfg), test)
    known_mask = np.array([s.label != UNKNOWN for s in test], dtype=bool)
    if not known_mask.any() or known_mask.all():
        raise ValueError("test set must contain both known and UNKNOWN samples")
    out: dict[str, EvalReport] = {}
    for name in cfg.ordered_functions:
        values = np.array([r.scores[name] for r in reports], dtype=np.float64)
        out[name] = evaluate_scores(values[known_mask], values[~known_mask])
    return out


@dataclass(frozen=True)
class FunctionStats:
    """Across-repeat aggregate for one scoring function."""

    auroc_mean: float
    auroc_std: float
    fpr95_mean: float
    fpr95_std: float
    auroc_per_repeat: tuple[float, ...]
    fpr95_per_repeat: tuple[float, ...]


@dataclass(frozen=True)
class FewShotReport:
    k: int
    repeats: int
    n_known: int
    n_unknown: int
    stats: Mapping[str, FunctionStats]
    drawn_sample_ids: tuple[Mapping[int, tuple[int, ...]], ...]


def fewshot_protocol(
    support: Sequence[SampleEmbeddingSet],
    test: Sequence[SampleEmbeddingSet],
    k: int,
    repeats: int,
    seed: int,
    coreset_cfg: CoresetConfig,
    scoring_cfg: ScoringConfig,
) -> FewShotReport:
    """Resampled K-shot evaluation.

    Repeat ``r`` (r = 0..repeats-1) draws K support samples per class with
    a generator seeded ``seed ^ r``, rebuilds banks + coreset + index on the
    draw, and evaluates the test set. Draw indices are sorted so K equal to
    the class size reproduces the full-support evaluation exactly. The
    drawn sample ids of every repeat are kept for audit.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_class: dict[int, list[SampleEmbeddingSet]] = {}
    for sample in support:
        if sample.label == UNKNOWN:
            raise ValueError(f"support sample {sample.sample_id} is UNKNOWN-labeled")
        per_class.setdefault(sample.label, []).append(sample)
    for class_id in sorted(per_class):
        if len(per_class[class_id]) < k:
            raise ValueError(
                f"class {class_id} has only {len(per_class[class_id])} support samples, "
                f"needs K={k}"
            )

    def run_repeat(r: int) -> tuple[dict[str, EvalReport], dict[int, tuple[int, ...]]]:
        rng = np.random.default_rng(seed ^ r)
        subset: list[SampleEmbeddingSet] = []
        drawn: dict[int, tuple[int, ...]] = {}
        for class_id in sorted(per_class):
            pool = per_class[class_id]
            idx = np.sort(rng.choice(len(pool), size=k, replace=False))
            subset.extend(pool[i] for i in idx)
            drawn[class_id] = tuple(int(pool[i].sample_id) for i in idx)
        bank = build_unified_bank(subset, coreset_cfg, {"k_shot": str(k)})
        cfg = scoring_cfg
        if "nn_global" in scoring_cfg.functions:
            cfg = ScoringConfig(
                functions=scoring_cfg.functions,
                support_globals=support_globals_matrix(subset),
            )
        return evaluate_pipeline(build_index(bank), test, cfg), drawn

    results = parallel_map(run_repeat, list(range(repeats)))
    per_repeat_reports = [r[0] for r in results]
    draws = tuple(r[1] for r in results)
    n_known = per_repeat_reports[0][next(iter(per_repeat_reports[0]))].n_known
    n_unknown = per_repeat_reports[0][next(iter(per_repeat_reports[0]))].n_unknown
    stats: dict[str, FunctionStats] = {}
    for name in scoring_cfg.ordered_functions:
        aurocs = np.array([rep[name].auroc for rep in per_repeat_reports])
        fprs = np.array([rep[name].fpr95 for rep in per_repeat_reports])
        stats[name] = FunctionStats(
            auroc_mean=float(aurocs.mean()),
            auroc_std=float(aurocs.std()),
            fpr95_mean=float(fprs.mean()),
            fpr95_std=float(fprs.std()),
            auroc_per_repeat=tuple(float(x) for x in aurocs),
            fpr95_per_repeat=tuple(float(x) for x in fprs),
        )
    return FewShotReport(k, repeats, n_known, n_unknown, stats, draws)


def report_lines(report: EvalReport, function: str | None = None, k: int = 0, repeats: int = 1) -> str:
    """key=value serialization; k=0 denotes the full-support regime."""
    lines = []
    if function is not None:
        lines.append(f"function={function}")
    lines += [
        f"auroc={report.auroc:.17g}",
        f"fpr95={report.fpr95:.17g}",
        f"n_known={report.n_known}",
        f"n_unknown={report.n_unknown}",
        f"repeats={repeats}",
        f"k={k}",
    ]
    return "\n".join(lines) + "\n"


def write_report(
    reports: Mapping[str, EvalReport], path: str | Path, k: int = 0, repeats: int = 1
) -> None:
    blocks = [report_lines(rep, name, k, repeats) for name, rep in reports.items()]
    Path(path).write_text("\n".join(blocks), encoding="utf-8")


def reports_tsv_lines(reports: Mapping[str, EvalReport], k: int = 0, repeats: int = 1) -> list[str]:
    lines = ["function\tauroc\tfpr95\tn_known\tn_unknown\trepeats\tk"]
    for name, rep in reports.items():
        lines.append(
            f"{name}\t{rep.auroc:.17g}\t{rep.fpr95:.17g}\t{rep.n_known}\t{rep.n_unknown}"
            f"\t{repeats}\t{k}"
        )
    return lines


def write_reports_tsv(
    reports: Mapping[str, EvalReport], path: str | Path, k: int = 0, repeats: int = 1
) -> None:
    Path(path).write_text("\n".join(reports_tsv_lines(reports, k, repeats)) + "\n", encoding="utf-8")
