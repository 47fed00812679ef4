"""Input validation helpers shared by the estimators and pipeline functions."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import InputError, canonical_label_set


def check_indicator_matrix(Y, n_labels: int | None = None) -> np.ndarray:
    """Validate a binary label-indicator matrix and return it as float64."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0 or Y.shape[1] == 0:
        raise InputError(f"expected a non-empty 2-D indicator matrix, got shape {Y.shape}")
    if n_labels is not None and Y.shape[1] != n_labels:
        raise InputError(f"indicator matrix has {Y.shape[1]} columns, expected {n_labels}")
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise InputError("indicator matrix entries must be 0 or 1")
    return Y


def check_probability_matrix(P, n_labels: int | None = None) -> np.ndarray:
    """Validate a matrix of per-label probabilities in [0, 1]."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] == 0:
        raise InputError(f"expected a non-empty 2-D probability matrix, got shape {P.shape}")
    if n_labels is not None and P.shape[1] != n_labels:
        raise InputError(f"probability matrix has {P.shape[1]} columns, expected {n_labels}")
    if not np.all(np.isfinite(P)):
        raise InputError("probabilities must be finite")
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise InputError("probabilities must lie in [0, 1]")
    return P


def check_label_sets(sets: Sequence[Sequence[int]], n_labels: int) -> list[tuple[int, ...]]:
    """Canonicalize a sequence of label sets (sorted, unique, in range)."""
    return [canonical_label_set(members, n_labels) for members in sets]


def check_fitted(estimator, attribute: str) -> None:
    """Raise if the estimator has not been fitted/initialized yet."""
    if getattr(estimator, attribute, None) is None:
        raise InputError(
            f"{type(estimator).__name__} is not fitted; call fit() or initialize() first"
        )
