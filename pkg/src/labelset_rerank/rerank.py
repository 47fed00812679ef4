"""Stage-two combiner: rescore candidate lists and tune the mixing weights.

Every candidate's combined score is base_logprob + alpha * R(set), where R is
the scorer's length-penalized set score. With alpha = 0 the combined scores
equal the base scores exactly and the original order is preserved; ties in
the combined score always resolve to the earlier original rank, which keeps
rescoring idempotent and order-preserving in the degenerate cases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_indicator_matrix, check_probability_matrix
from .core import Candidate, CandidateList, InputError, MarginalPrediction, canonical_label_set
from .metrics import micro_macro_f1
from .topk import enumerate_top_sets

DEFAULT_ALPHA_GRID = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
DEFAULT_BETA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25)


class SetScorer(Protocol):
    """What a reranker needs from a scorer: raw set scores + length penalty."""

    def set_scores(self, sets: Sequence[Sequence[int]]) -> np.ndarray: ...

    def penalized_scores(self, raw: np.ndarray, sizes: np.ndarray, beta: float) -> np.ndarray: ...

    def rerank_score(self, sets: Sequence[Sequence[int]], beta: float) -> np.ndarray: ...


@dataclass
class RerankedList:
    """A candidate list after rescoring, best combined score first.

    original_ranks[i] is the 1-based rank the i-th candidate held in the
    input ordering.
    """

    instance_id: str
    candidates: list[Candidate]
    original_ranks: list[int]

    def __len__(self) -> int:
        return len(self.candidates)

    def member_sets(self) -> list[tuple[int, ...]]:
        return [c.members for c in self.candidates]

    def top(self) -> Candidate:
        return self.candidates[0]


@dataclass
class GridSearchResult:
    """Full (alpha, beta) -> validation score table and the winning cell."""

    objective: str
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    table: list[dict]
    best_alpha: float
    best_beta: float
    best_micro_f1: float
    best_macro_f1: float


def _combined(base: np.ndarray, rerank: np.ndarray, alpha: float) -> np.ndarray:
    # alpha == 0 must reproduce the base scores exactly (and never touch a
    # scorer's -inf with a 0 multiplier).
    if alpha == 0.0:
        return base.copy()
    return base + alpha * rerank


def rescore(
    candidates: CandidateList,
    scorer: SetScorer,
    alpha: float,
    beta: float,
) -> RerankedList:
    """Attach reranker and combined scores, then sort by combined score."""
    sets = candidates.member_sets()
    if not sets:
        raise InputError(f"candidate list for {candidates.instance_id!r} is empty")
    rerank_scores = np.asarray(scorer.rerank_score(sets, beta), dtype=np.float64)
    base = np.array([c.base_logprob for c in candidates.candidates])
    combined = _combined(base, rerank_scores, alpha)
    order = sorted(range(len(sets)), key=lambda i: (-combined[i], i))
    reranked = [
        Candidate(
            members=candidates.candidates[i].members,
            base_logprob=candidates.candidates[i].base_logprob,
            rerank_score=float(rerank_scores[i]),
            combined_score=float(combined[i]),
        )
        for i in order
    ]
    return RerankedList(
        instance_id=candidates.instance_id,
        candidates=reranked,
        original_ranks=[i + 1 for i in order],
    )


def rescore_many(
    candidate_lists: Sequence[CandidateList],
    scorer: SetScorer,
    alpha: float,
    beta: float,
) -> list[RerankedList]:
    """Rescore several lists with one batched scorer call."""
    flat_sets = []
    offsets = [0]
    for clist in candidate_lists:
        if len(clist) == 0:
            raise InputError(f"candidate list for {clist.instance_id!r} is empty")
        flat_sets.extend(clist.member_sets())
        offsets.append(len(flat_sets))
    raw = np.asarray(scorer.set_scores(flat_sets), dtype=np.float64)
    sizes = np.array([len(s) for s in flat_sets], dtype=np.float64)
    rerank_scores = scorer.penalized_scores(raw, sizes, beta)
    out = []
    for idx, clist in enumerate(candidate_lists):
        lo, hi = offsets[idx], offsets[idx + 1]
        base = np.array([c.base_logprob for c in clist.candidates])
        combined = _combined(base, rerank_scores[lo:hi], alpha)
        order = sorted(range(hi - lo), key=lambda i: (-combined[i], i))
        out.append(
            RerankedList(
                instance_id=clist.instance_id,
                candidates=[
                    Candidate(
                        members=clist.candidates[i].members,
                        base_logprob=clist.candidates[i].base_logprob,
                        rerank_score=float(rerank_scores[lo + i]),
                        combined_score=float(combined[i]),
                    )
                    for i in order
                ],
                original_ranks=[i + 1 for i in order],
            )
        )
    return out


def grid_search(
    candidate_lists: Sequence[CandidateList],
    gold: Mapping[str, Sequence[int]],
    scorer: SetScorer,
    n_labels: int,
    alphas: Sequence[float] = DEFAULT_ALPHA_GRID,
    betas: Sequence[float] = DEFAULT_BETA_GRID,
    objective: str = "micro_f1",
) -> GridSearchResult:
    """Evaluate every (alpha, beta) cell on validation data, pick the argmax.

    The scorer is consulted once per candidate; alpha and beta only enter at
    combination time, so the grid itself is pure arithmetic. Grids are
    deduplicated and sorted ascending, and ties go to the smaller alpha,
    then the smaller beta.
    """
    if len(candidate_lists) == 0:
        raise InputError("validation set is empty")
    if len(alphas) == 0 or len(betas) == 0:
        raise InputError("alpha and beta grids must be non-empty")
    if objective not in ("micro_f1", "macro_f1"):
        raise InputError(f"unknown objective {objective!r}")
    alphas = sorted(set(float(a) for a in alphas))
    betas = sorted(set(float(b) for b in betas))

    flat_sets = []
    offsets = [0]
    for clist in candidate_lists:
        if len(clist) == 0:
            raise InputError(f"candidate list for {clist.instance_id!r} is empty")
        if clist.instance_id not in gold:
            raise InputError(f"no gold set for instance {clist.instance_id!r}")
        flat_sets.extend(clist.member_sets())
        offsets.append(len(flat_sets))
    raw = np.asarray(scorer.set_scores(flat_sets), dtype=np.float64)
    sizes = np.array([len(s) for s in flat_sets], dtype=np.float64)
    base = np.array([c.base_logprob for clist in candidate_lists for c in clist.candidates])

    table: list[dict] = []
    best = None
    for alpha in alphas:
        for beta in betas:
            rerank_scores = scorer.penalized_scores(raw, sizes, beta)
            combined = _combined(base, rerank_scores, alpha)
            predictions = {}
            for idx, clist in enumerate(candidate_lists):
                lo, hi = offsets[idx], offsets[idx + 1]
                winner = int(np.argmax(combined[lo:hi]))  # first max = best original rank
                predictions[clist.instance_id] = clist.candidates[winner].members
            report = micro_macro_f1(predictions, gold, n_labels)
            cell = {
                "alpha": float(alpha),
                "beta": float(beta),
                "micro_f1": report.micro_f1,
                "macro_f1": report.macro_f1,
            }
            table.append(cell)
            if best is None or cell[objective] > best[objective]:
                best = cell
    return GridSearchResult(
        objective=objective,
        alphas=tuple(float(a) for a in alphas),
        betas=tuple(float(b) for b in betas),
        table=table,
        best_alpha=best["alpha"],
        best_beta=best["beta"],
        best_micro_f1=best["micro_f1"],
        best_macro_f1=best["macro_f1"],
    )


def diff_prediction(
    base_top: Sequence[int], reranked_top: Sequence[int]
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(added, removed) label indices between the base and reranked top sets."""
    a = set(base_top)
    b = set(reranked_top)
    return tuple(sorted(b - a)), tuple(sorted(a - b))


class LabelSetReranker(BaseEstimator):
    """End-to-end reranking pipeline with the sklearn estimator surface.

    Wraps a fitted set scorer: ``fit`` grid-searches alpha and beta on
    validation marginals + gold indicator rows, ``predict`` maps a marginal
    matrix to the binary indicator matrix of the reranked top-1 sets. Fix
    ``alpha`` and ``beta`` up front to skip the search.
    """

    def __init__(
        self,
        scorer: SetScorer | None = None,
        alpha: float | None = None,
        beta: float | None = None,
        k: int = 50,
        alphas: Sequence[float] = DEFAULT_ALPHA_GRID,
        betas: Sequence[float] = DEFAULT_BETA_GRID,
        objective: str = "micro_f1",
    ) -> None:
        self.scorer = scorer
        self.alpha = alpha
        self.beta = beta
        self.k = k
        self.alphas = alphas
        self.betas = betas
        self.objective = objective

    def _candidate_lists(self, P: np.ndarray) -> list[CandidateList]:
        marginals = [MarginalPrediction(str(i), row) for i, row in enumerate(P)]
        return [enumerate_top_sets(m, self.k) for m in marginals]

    def fit(self, P, Y) -> "LabelSetReranker":
        """Choose alpha and beta on validation data (held out from the scorer)."""
        if self.scorer is None:
            raise InputError("LabelSetReranker needs a fitted scorer")
        P = check_probability_matrix(P)
        Y = check_indicator_matrix(Y, P.shape[1])
        if P.shape[0] != Y.shape[0]:
            raise InputError("marginals and gold have different instance counts")
        lists = self._candidate_lists(P)
        gold = {
            str(i): canonical_label_set(np.flatnonzero(Y[i]), P.shape[1])
            for i in range(P.shape[0])
        }
        alphas = self.alphas if self.alpha is None else (self.alpha,)
        betas = self.betas if self.beta is None else (self.beta,)
        self.grid_result_ = grid_search(
            lists, gold, self.scorer, P.shape[1], alphas, betas, self.objective
        )
        self.alpha_ = self.grid_result_.best_alpha
        self.beta_ = self.grid_result_.best_beta
        return self

    def _resolved(self) -> tuple[float, float]:
        if getattr(self, "alpha_", None) is not None:
            return self.alpha_, self.beta_
        if self.alpha is not None and self.beta is not None:
            return self.alpha, self.beta
        raise InputError("call fit() first or fix alpha and beta explicitly")

    def rerank(self, P) -> list[RerankedList]:
        """Full reranked lists for a marginal matrix."""
        if self.scorer is None:
            raise InputError("LabelSetReranker needs a fitted scorer")
        alpha, beta = self._resolved()
        P = check_probability_matrix(P)
        return rescore_many(self._candidate_lists(P), self.scorer, alpha, beta)

    def predict(self, P) -> np.ndarray:
        """Binary indicator matrix of the top-1 reranked set per instance."""
        P = check_probability_matrix(P)
        out = np.zeros(P.shape, dtype=np.float64)
        for i, reranked in enumerate(self.rerank(P)):
            for j in reranked.top().members:
                out[i, j] = 1.0
        return out
