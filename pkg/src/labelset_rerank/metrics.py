"""Evaluation suite: micro/macro F1, best-candidate rank, frequency buckets.

Set-level prediction quality is measured with micro F1 (globally pooled
true/false positives and negatives) and macro F1 (unweighted mean of
per-label F1 over the WHOLE label space, so labels absent from both gold and
predictions contribute 0). Per-probability metrics such as Precision@K and
AUC do not apply to set reranking and are deliberately not here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._validation import check_label_sets
from .core import CandidateList, InputError, canonical_label_set


@dataclass
class EvalReport:
    """Aggregate and per-label scores for one prediction run."""

    micro_f1: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    n_instances: int
    bucket_f1: list[float] | None = None
    k_curve: list[tuple[int, float]] | None = None


def _safe_div(num: np.ndarray | float, den: np.ndarray | float):
    return np.divide(num, den, out=np.zeros_like(np.asarray(num, dtype=np.float64)), where=np.asarray(den) != 0)


def _pooled_counts(
    predictions: Mapping[str, Sequence[int]],
    gold: Mapping[str, Sequence[int]],
    n_labels: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-label (tp, fp, fn) counts over all instances."""
    if set(predictions.keys()) != set(gold.keys()):
        missing = sorted(set(gold) ^ set(predictions))
        raise InputError(f"instance keys differ between predictions and gold: {missing[:10]}")
    tp = np.zeros(n_labels, dtype=np.int64)
    fp = np.zeros(n_labels, dtype=np.int64)
    fn = np.zeros(n_labels, dtype=np.int64)
    for key in predictions:
        p = set(canonical_label_set(predictions[key], n_labels))
        g = set(canonical_label_set(gold[key], n_labels))
        for i in p & g:
            tp[i] += 1
        for i in p - g:
            fp[i] += 1
        for i in g - p:
            fn[i] += 1
    return tp, fp, fn


def micro_macro_f1(
    predictions: Mapping[str, Sequence[int]],
    gold: Mapping[str, Sequence[int]],
    n_labels: int,
) -> EvalReport:
    """Micro F1 from pooled counts, macro F1 averaged over every label.

    All zero-denominator precision/recall/F1 values are defined as 0.
    """
    tp, fp, fn = _pooled_counts(predictions, gold, n_labels)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    micro = float(_safe_div(2 * tp.sum(), 2 * tp.sum() + fp.sum() + fn.sum()))
    # plain left-to-right sum: the macro average is reproducible to the bit
    macro = sum(f1.tolist()) / n_labels
    return EvalReport(
        micro_f1=micro,
        macro_f1=macro,
        precision=precision,
        recall=recall,
        f1=f1,
        n_instances=len(predictions),
    )


def instance_f1(predicted: Sequence[int], gold: Sequence[int]) -> float:
    """Set-overlap F1 2|a & b| / (|a| + |b|); two empty sets match exactly (1)."""
    a = set(predicted)
    b = set(gold)
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def avg_best_rank(
    candidate_lists: Sequence[CandidateList],
    gold: Mapping[str, Sequence[int]],
) -> float:
    """Mean 1-based rank of each list's best candidate against gold.

    The best candidate maximizes instance-level F1; rank ties go to the
    earlier (lower) rank.
    """
    if not candidate_lists:
        raise InputError("no candidate lists given")
    ranks = []
    for clist in candidate_lists:
        if len(clist) == 0:
            raise InputError(f"candidate list for {clist.instance_id!r} is empty")
        if clist.instance_id not in gold:
            raise InputError(f"no gold set for instance {clist.instance_id!r}")
        gold_set = gold[clist.instance_id]
        best_rank = 1
        best_score = -1.0
        for rank, cand in enumerate(clist.candidates, start=1):
            score = instance_f1(cand.members, gold_set)
            if score > best_score:
                best_score = score
                best_rank = rank
        ranks.append(best_rank)
    return float(np.mean(ranks))


def label_frequencies(sets: Sequence[Sequence[int]], n_labels: int) -> np.ndarray:
    """Occurrence count of each label across a corpus of label sets."""
    freq = np.zeros(n_labels, dtype=np.int64)
    for members in check_label_sets(sets, n_labels):
        for i in members:
            freq[i] += 1
    return freq


def frequency_buckets(frequencies: np.ndarray, n_buckets: int) -> list[np.ndarray]:
    """Split labels into rank buckets of near-equal size, most frequent first.

    Frequency ties are broken by label index so the split is deterministic.
    """
    frequencies = np.asarray(frequencies)
    n_labels = frequencies.shape[0]
    if n_buckets < 1 or n_buckets > n_labels:
        raise InputError(f"bucket count must be in [1, {n_labels}], got {n_buckets}")
    order = sorted(range(n_labels), key=lambda i: (-frequencies[i], i))
    return [np.asarray(chunk) for chunk in np.array_split(np.array(order), n_buckets)]


def bucketed_f1(
    predictions: Mapping[str, Sequence[int]],
    gold: Mapping[str, Sequence[int]],
    frequencies: np.ndarray,
    n_buckets: int = 6,
) -> list[float]:
    """Micro F1 restricted to each frequency bucket's labels.

    With one bucket this reproduces the overall micro F1 exactly.
    """
    n_labels = np.asarray(frequencies).shape[0]
    buckets = frequency_buckets(frequencies, n_buckets)
    tp, fp, fn = _pooled_counts(predictions, gold, n_labels)
    out = []
    for labels in buckets:
        t, p, n = tp[labels].sum(), fp[labels].sum(), fn[labels].sum()
        out.append(float(_safe_div(2 * t, 2 * t + p + n)))
    return out


def sweep_candidate_counts(
    candidate_lists: Sequence[CandidateList],
    gold: Mapping[str, Sequence[int]],
    scorer,
    alpha: float,
    beta: float,
    k_values: Sequence[int],
    n_labels: int,
) -> list[tuple[int, EvalReport]]:
    """Rerank only the top-k prefix of each list for every k and evaluate.

    Shows how the final score saturates as more candidates are offered.
    """
    from .rerank import rescore  # local import: rerank builds on these metrics

    for k in k_values:
        if k < 1:
            raise InputError(f"k values must be >= 1, got {k}")
        for clist in candidate_lists:
            if k > len(clist):
                raise InputError(
                    f"k={k} exceeds the {len(clist)} candidates for {clist.instance_id!r}"
                )
    curve = []
    for k in k_values:
        predictions = {}
        for clist in candidate_lists:
            prefix = CandidateList(clist.instance_id, clist.candidates[:k])
            reranked = rescore(prefix, scorer, alpha, beta)
            predictions[clist.instance_id] = reranked.candidates[0].members
        report = micro_macro_f1(predictions, gold, n_labels)
        curve.append((int(k), report))
    return curve


def format_eval_table(rows: Sequence[tuple[str, float, float]]) -> str:
    """Aligned text table of (name, micro F1, macro F1) rows."""
    name_width = max(len("model"), *(len(r[0]) for r in rows)) if rows else len("model")
    lines = [f"{'model':<{name_width}}  {'micro_f1':>9}  {'macro_f1':>9}"]
    for name, micro, macro in rows:
        lines.append(f"{name:<{name_width}}  {micro:>9.4f}  {macro:>9.4f}")
    return "\n".join(lines)
