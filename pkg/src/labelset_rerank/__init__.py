"""Improve multi-label predictions by reranking label-set candidates.

Two stages: enumerate the exact top-k most probable label sets under an
external predictor's independent per-label marginals, then rerank them with
a learned label-set density score combined as
``log P_base(set) + alpha * R(set)``.
"""

from .core import (
    Candidate,
    CandidateList,
    InputError,
    LabelSpace,
    MarginalPrediction,
    RerankConfig,
    canonical_label_set,
    clamp_probability,
    indicator_to_sets,
    set_base_logprob,
    sets_to_indicator,
)
from .topk import enumerate_top_sets
from .made import MadeDensityEstimator, length_penalized
from .masked_attention import MaskedAttentionScorer
from .rerank import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BETA_GRID,
    GridSearchResult,
    LabelSetReranker,
    RerankedList,
    diff_prediction,
    grid_search,
    rescore,
    rescore_many,
)
from .metrics import (
    EvalReport,
    avg_best_rank,
    bucketed_f1,
    instance_f1,
    label_frequencies,
    micro_macro_f1,
    sweep_candidate_counts,
)
from .synth import ExactJointScorer, SyntheticSpec, exact_joint_table, generate

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CandidateList",
    "DEFAULT_ALPHA_GRID",
    "DEFAULT_BETA_GRID",
    "EvalReport",
    "ExactJointScorer",
    "GridSearchResult",
    "InputError",
    "LabelSetReranker",
    "LabelSpace",
    "MadeDensityEstimator",
    "MarginalPrediction",
    "MaskedAttentionScorer",
    "RerankConfig",
    "RerankedList",
    "SyntheticSpec",
    "avg_best_rank",
    "bucketed_f1",
    "canonical_label_set",
    "clamp_probability",
    "diff_prediction",
    "enumerate_top_sets",
    "exact_joint_table",
    "generate",
    "grid_search",
    "indicator_to_sets",
    "instance_f1",
    "label_frequencies",
    "length_penalized",
    "micro_macro_f1",
    "rescore",
    "rescore_many",
    "set_base_logprob",
    "sets_to_indicator",
    "sweep_candidate_counts",
]
