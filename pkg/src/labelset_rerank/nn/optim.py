"""Stochastic gradient optimizer with adaptive first/second moments."""

from __future__ import annotations

import numpy as np


class AdamOptimizer:
    """Adam over a named parameter dict, updated in place.

    Defaults follow the reference training setup: step size 2e-5, decay
    rates (0.9, 0.999), stabilizer 1e-8. Updates are elementwise and
    deterministic, so fixed seeds give bitwise-reproducible training.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float = 2e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p) for name, p in params.items()}
        self._v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
