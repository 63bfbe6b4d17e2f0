"""Training-free semantic novelty detection for 3D point-cloud patch embeddings.

Known-class samples contribute local patch embeddings to class memory
banks; a greedy k-center coreset keeps the banks compact; test samples are
scored by nearest-neighbor patch matching, with assignment-entropy and
distance-based normality scores evaluated via AUROC and FPR95.
"""

__version__ = "0.1.0"

from .banks import (
    UNKNOWN,
    ClassMemoryBank,
    MatchRecord,
    PatchEmbedding,
    SampleEmbeddingSet,
    ScoreReport,
    UnifiedBank,
    collect_class_banks,
)
from .coreset import CoresetConfig, build_unified_bank, coverage_radius, greedy_farthest_point, select_coreset
from .matching import BankIndex, build_index, match_patches
from .metrics import (
    EvalReport,
    FewShotReport,
    auroc,
    evaluate_pipeline,
    evaluate_scores,
    fewshot_protocol,
    fpr95,
)
from .opbk import (
    OpbkError,
    read_bank,
    read_class_map,
    read_embedding_sets,
    write_bank,
    write_class_map,
    write_embedding_sets,
)
from .scoring import (
    ScoringConfig,
    class_probabilities,
    score_entropy,
    score_max,
    score_mean,
    score_nn_global,
    score_sample,
    score_weighted_entropy,
)
from .synth import SynthConfig, generate

__all__ = [
    "UNKNOWN",
    "BankIndex",
    "ClassMemoryBank",
    "CoresetConfig",
    "EvalReport",
    "FewShotReport",
    "MatchRecord",
    "OpbkError",
    "PatchEmbedding",
    "SampleEmbeddingSet",
    "ScoreReport",
    "ScoringConfig",
    "SynthConfig",
    "UnifiedBank",
    "auroc",
    "build_index",
    "build_unified_bank",
    "class_probabilities",
    "collect_class_banks",
    "coverage_radius",
    "evaluate_pipeline",
    "evaluate_scores",
    "fewshot_protocol",
    "fpr95",
    "generate",
    "greedy_farthest_point",
    "match_patches",
    "read_bank",
    "read_class_map",
    "read_embedding_sets",
    "score_entropy",
    "score_max",
    "score_mean",
    "score_nn_global",
    "score_sample",
    "score_weighted_entropy",
    "select_coreset",
    "write_bank",
    "write_class_map",
    "write_embedding_sets",
]
