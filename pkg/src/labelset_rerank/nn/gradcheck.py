"""Finite-difference gradient checker for the hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import InputError


def grad_check(
    params: dict[str, np.ndarray],
    loss_fn: Callable[[], float],
    grad_fn: Callable[[], dict[str, np.ndarray]],
    *,
    step: float = 1e-4,
    samples_per_tensor: int = 8,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    For a random subsample of entries in every parameter tensor, perturb the
    entry by +-step, recompute the loss, and compare the central difference
    with the analytic gradient. Returns the maximum relative error
    |fd - analytic| / max(1e-6, |fd| + |analytic|); the floor keeps
    round-off noise on near-zero gradients from registering as error.

    Check at generic points: a rectifier pre-activation of exactly zero puts
    the central difference astride the kink, where no subgradient convention
    can match it (nudge biases away from zero before checking).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    analytic = grad_fn()
    worst = 0.0
    for name, p in params.items():
        grad = analytic[name]
        flat = p.reshape(-1)
        n_checks = min(samples_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n_checks, replace=False)
        for j in idx:
            original = flat[j]
            flat[j] = original + step
            loss_plus = loss_fn()
            flat[j] = original - step
            loss_minus = loss_fn()
            flat[j] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise InputError(f"non-finite loss while checking {name}")
            fd = (loss_plus - loss_minus) / (2.0 * step)
            ana = grad.reshape(-1)[j]
            rel = abs(fd - ana) / max(1e-6, abs(fd) + abs(ana))
            worst = max(worst, rel)
    return worst
