"""Core domain types and numeric conventions shared by every module.

A label space is an ordered vocabulary of label codes. A label set is
canonically a sorted tuple of label indices (the dense binary-vector view
is produced on demand, since real vocabularies reach thousands of labels
while typical sets hold tens). All probabilities are clamped away from
{0, 1} before any logarithm, and all logs are natural logs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before any log.
PROB_EPS = 1e-12


class InputError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class LabelSpace:
    """Ordered vocabulary of label codes with code <-> index lookup."""

    codes: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.codes) == 0:
            raise InputError("label space must contain at least one code")
        index: dict[str, int] = {}
        for i, code in enumerate(self.codes):
            if not isinstance(code, str) or code == "":
                raise InputError(f"label code at position {i} is not a non-empty string")
            if code in index:
                raise InputError(f"duplicate label code {code!r}")
            index[code] = i
        object.__setattr__(self, "index", index)

    @classmethod
    def from_codes(cls, codes: Iterable[str]) -> "LabelSpace":
        return cls(tuple(codes))

    def __len__(self) -> int:
        return len(self.codes)

    def index_of(self, code: str) -> int:
        try:
            return self.index[code]
        except KeyError:
            raise InputError(f"unknown label code {code!r}") from None

    def encode(self, codes: Iterable[str]) -> tuple[int, ...]:
        """Map label codes to a canonical (sorted, unique) index tuple."""
        return canonical_label_set((self.index_of(c) for c in codes), len(self))

    def decode(self, members: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.codes[i] for i in members)

    @property
    def digest(self) -> str:
        """SHA-256 of the newline-joined codes; identifies the vocabulary."""
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()


def canonical_label_set(members: Iterable[int], n_labels: int) -> tuple[int, ...]:
    """Return the canonical sorted, duplicate-free index tuple for a label set."""
    out = tuple(sorted(set(int(i) for i in members)))
    if out and (out[0] < 0 or out[-1] >= n_labels):
        bad = out[0] if out[0] < 0 else out[-1]
        raise InputError(f"label index {bad} outside [0, {n_labels})")
    return out


def sets_to_indicator(sets: Sequence[Sequence[int]], n_labels: int) -> np.ndarray:
    """Stack label sets into a binary indicator matrix of shape (n_sets, n_labels)."""
    out = np.zeros((len(sets), n_labels), dtype=np.float64)
    for r, members in enumerate(sets):
        for i in members:
            if not 0 <= i < n_labels:
                raise InputError(f"label index {i} outside [0, {n_labels})")
            out[r, int(i)] = 1.0
    return out


def indicator_to_sets(indicator: np.ndarray) -> list[tuple[int, ...]]:
    """Inverse of :func:`sets_to_indicator` for a binary matrix."""
    mat = np.asarray(indicator)
    if mat.ndim != 2:
        raise InputError(f"indicator matrix must be 2-D, got shape {mat.shape}")
    return [tuple(int(i) for i in np.flatnonzero(row)) for row in mat]


def clamp_probability(p: float) -> float:
    """Clamp a probability into [PROB_EPS, 1 - PROB_EPS]; rejects non-finite input."""
    if not math.isfinite(p):
        raise InputError(f"probability must be finite, got {p!r}")
    return min(max(p, PROB_EPS), 1.0 - PROB_EPS)


def clamp_probabilities(probs: np.ndarray) -> np.ndarray:
    """Vector version of :func:`clamp_probability`."""
    probs = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(probs)):
        raise InputError("probabilities must be finite")
    return np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True)
class MarginalPrediction:
    """Per-label independent probabilities for one instance.

    The instance is carried as an opaque identifier; the text it came from is
    outside this toolkit. Probabilities are clamped at construction so every
    downstream log is finite.
    """

    instance_id: str
    probs: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.instance_id, str) or self.instance_id == "":
            raise InputError("instance_id must be a non-empty string")
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InputError(f"probs must be a non-empty 1-D vector, got shape {probs.shape}")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise InputError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", clamp_probabilities(probs))
        self.probs.setflags(write=False)

    @property
    def n_labels(self) -> int:
        return int(self.probs.shape[0])

    def map_set(self) -> tuple[int, ...]:
        """The single most probable set under independence: {i : p_i >= 0.5}."""
        return tuple(int(i) for i in np.flatnonzero(self.probs >= 0.5))


def set_base_logprob(marginal: MarginalPrediction, members: Sequence[int]) -> float:
    """Log-probability of a label set under the independent marginals.

    Sum of log p_i over members plus log(1 - p_i) over non-members, natural
    log, clamped probabilities.
    """
    members = canonical_label_set(members, marginal.n_labels)
    log_p = np.log(marginal.probs)
    log_q = np.log1p(-marginal.probs)
    total = log_q.copy()
    if members:
        idx = np.fromiter(members, dtype=np.intp)
        total[idx] = log_p[idx]
    return math.fsum(total.tolist())


@dataclass
class Candidate:
    """One label-set hypothesis with its scores.

    ``base_logprob`` is the log-probability under the independent marginals;
    ``rerank_score`` and ``combined_score`` stay ``None`` until rescoring.
    """

    members: tuple[int, ...]
    base_logprob: float
    rerank_score: float | None = None
    combined_score: float | None = None


@dataclass
class CandidateList:
    """Candidates for one instance, rank 1 first (highest base_logprob)."""

    instance_id: str
    candidates: list[Candidate]

    def __len__(self) -> int:
        return len(self.candidates)

    def member_sets(self) -> list[tuple[int, ...]]:
        return [c.members for c in self.candidates]


@dataclass
class RerankConfig:
    """Candidate-count, score-combination, and training hyperparameters.

    Defaults follow the reference training setup: 50 candidates, 10 MADE
    orderings, 30 epochs of Adam at step size 2e-5 with batches of 64.
    """

    k: int = 50
    alpha: float = 0.0
    beta: float = 0.0
    n_orderings: int = 10
    seed: int = 0
    learning_rate: float = 2e-5
    batch_size: int = 64
    epochs: int = 30

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.n_orderings < 1:
            raise InputError(f"n_orderings must be >= 1, got {self.n_orderings}")
        if self.alpha < 0 or self.beta < 0:
            raise InputError("alpha and beta must be non-negative")
        if self.seed < 0:
            raise InputError("seed must be a non-negative integer")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise InputError("optimizer settings must be positive")
