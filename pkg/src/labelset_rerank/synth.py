"""Synthetic correlated-label corpora with an exactly computable joint.

Label sets are drawn from a Bernoulli mixture: pick a component, then sample
each label independently from that component's probability vector. Components
with sharply polarized probabilities create strong co-occurrence and
exclusion structure between labels, which is exactly what a reranker is
supposed to exploit and what a per-label independent predictor cannot see.

The emitted "base predictor" marginals are the instance's true component
probabilities corrupted by Gaussian noise in logit space, so the gap between
the independent product and the true mixture joint is the controlled
variable. For small spaces the full joint table is computed exactly and
doubles as an oracle scorer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_label_sets
from .core import InputError, MarginalPrediction, clamp_probabilities
from .made import length_penalized

EXACT_JOINT_MAX_LABELS = 20


@dataclass(frozen=True)
class SyntheticSpec:
    """Mixture definition plus corpus sizes and the noise level.

    components[c] is the per-label Bernoulli vector of component c and
    weights[c] its mixing weight (positive, summing to 1 within 1e-9).
    noise_sigma is the standard deviation of the logit-space corruption
    applied to the true marginals.
    """

    n_labels: int
    weights: tuple[float, ...]
    components: tuple[tuple[float, ...], ...]
    noise_sigma: float = 0.0
    seed: int = 0
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500

    def __post_init__(self) -> None:
        if self.n_labels < 1:
            raise InputError("n_labels must be >= 1")
        if len(self.weights) == 0 or len(self.weights) != len(self.components):
            raise InputError("need one weight per mixture component")
        if any(w <= 0 for w in self.weights):
            raise InputError("mixture weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise InputError(f"mixture weights must sum to 1, got {math.fsum(self.weights)!r}")
        for c, comp in enumerate(self.components):
            if len(comp) != self.n_labels:
                raise InputError(f"component {c} has {len(comp)} probabilities, expected {self.n_labels}")
            if any(not (0.0 <= p <= 1.0) for p in comp):
                raise InputError(f"component {c} probabilities must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise InputError("corpus sizes must be >= 1")


@dataclass
class SyntheticSplit:
    """One split: aligned instance ids, gold sets, and noisy base marginals."""

    instance_ids: list[str]
    gold: list[tuple[int, ...]]
    marginals: list[MarginalPrediction]


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    train: SyntheticSplit
    val: SyntheticSplit
    test: SyntheticSplit
    joint: np.ndarray | None = None

    def gold_map(self, split: SyntheticSplit) -> dict[str, tuple[int, ...]]:
        return dict(zip(split.instance_ids, split.gold))


def exact_joint_table(spec: SyntheticSpec) -> np.ndarray:
    """P(y) for every bitmask (bit i of the index <-> label i).

    Only feasible for small spaces; larger requests are a capability error.
    """
    d = spec.n_labels
    if d > EXACT_JOINT_MAX_LABELS:
        raise InputError(
            f"exact joint table supports at most {EXACT_JOINT_MAX_LABELS} labels, got {d}"
        )
    masks = np.arange(2**d, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(d)[None, :]) & 1).astype(np.float64)
    joint = np.zeros(2**d)
    for w, comp in zip(spec.weights, spec.components):
        p = np.asarray(comp, dtype=np.float64)
        joint += w * np.prod(np.where(bits == 1.0, p, 1.0 - p), axis=1)
    return joint


def set_to_bitmask(members: Sequence[int]) -> int:
    return sum(1 << int(i) for i in members)


def generate(spec: SyntheticSpec, with_joint: bool = True) -> SyntheticDataset:
    """Sample train/val/test splits; bitwise reproducible for a fixed seed."""
    rng = np.random.default_rng(spec.seed)
    weights = np.asarray(spec.weights, dtype=np.float64)
    comps = np.asarray(spec.components, dtype=np.float64)

    def sample_split(name: str, size: int) -> SyntheticSplit:
        component_idx = rng.choice(len(weights), size=size, p=weights / weights.sum())
        probs = comps[component_idx]
        bits = (rng.random((size, spec.n_labels)) < probs).astype(np.float64)
        noisy = clamp_probabilities(probs)
        logits = np.log(noisy) - np.log1p(-noisy)
        if spec.noise_sigma > 0:
            logits = logits + spec.noise_sigma * rng.standard_normal(logits.shape)
        marg = 1.0 / (1.0 + np.exp(-logits))
        ids = [f"{name}-{i:05d}" for i in range(size)]
        gold = [tuple(int(j) for j in np.flatnonzero(row)) for row in bits]
        marginals = [MarginalPrediction(ids[i], marg[i]) for i in range(size)]
        return SyntheticSplit(ids, gold, marginals)

    train = sample_split("train", spec.n_train)
    val = sample_split("val", spec.n_val)
    test = sample_split("test", spec.n_test)
    joint = None
    if with_joint and spec.n_labels <= EXACT_JOINT_MAX_LABELS:
        joint = exact_joint_table(spec)
    return SyntheticDataset(spec=spec, train=train, val=val, test=test, joint=joint)


class ExactJointScorer:
    """Oracle reranker material: the true log joint from a joint table.

    Sets with exactly zero probability score -inf and fall to the bottom.
    Follows the same length-penalty convention as the learned density
    estimator: the empty set keeps its raw log joint.
    """

    def __init__(self, joint: np.ndarray, n_labels: int) -> None:
        joint = np.asarray(joint, dtype=np.float64)
        if joint.shape != (2**n_labels,):
            raise InputError(f"joint table must have 2^{n_labels} entries, got {joint.shape}")
        self.n_labels_ = n_labels
        with np.errstate(divide="ignore"):
            self._log_joint = np.log(joint)

    def set_scores(self, sets: Sequence[Sequence[int]]) -> np.ndarray:
        sets = check_label_sets(sets, self.n_labels_)
        idx = np.array([set_to_bitmask(s) for s in sets], dtype=np.int64)
        return self._log_joint[idx]

    def penalized_scores(self, raw: np.ndarray, sizes: np.ndarray, beta: float) -> np.ndarray:
        return length_penalized(raw, sizes, beta)

    def rerank_score(self, sets: Sequence[Sequence[int]], beta: float) -> np.ndarray:
        sets = check_label_sets(sets, self.n_labels_)
        sizes = np.array([len(s) for s in sets], dtype=np.float64)
        return self.penalized_scores(self.set_scores(sets), sizes, beta)
