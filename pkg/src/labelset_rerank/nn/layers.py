"""Dense layers with optional binary connection masks, activations, layer norm."""

from __future__ import annotations

import numpy as np

from ..core import InputError


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    """Weights uniform in +-sqrt(6 / (n_in + n_out)), shape (n_out, n_in)."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, grad_out, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Evaluate on the non-overflowing branch for either sign.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), stable for large |x|."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -softplus(-x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along ``axis``; rows sum to 1."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def softmax_backward(grad_out: np.ndarray, out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of softmax given its output."""
    inner = np.sum(grad_out * out, axis=axis, keepdims=True)
    return out * (grad_out - inner)


class DenseLayer:
    """Affine map with an optional fixed binary connection mask.

    The effective weight is ``weights * mask`` at every forward and backward
    pass, so masked connections carry no signal and receive exactly zero
    gradient. Inputs may have any number of leading batch dimensions.
    """

    def __init__(
        self,
        weights: np.ndarray,
        bias: np.ndarray,
        mask: np.ndarray | None = None,
    ) -> None:
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise InputError(
                f"weights must be (out, in) with matching bias, got {weights.shape} / {bias.shape}"
            )
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise InputError("layer parameters must be finite")
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != weights.shape:
                raise InputError(f"mask shape {mask.shape} != weight shape {weights.shape}")
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise InputError("mask entries must be 0 or 1")
        self.weights = weights
        self.bias = bias
        self.mask = mask

    @classmethod
    def create(cls, rng: np.random.Generator, n_out: int, n_in: int) -> "DenseLayer":
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def effective_weights(self) -> np.ndarray:
        if self.mask is None:
            return self.weights
        return self.weights * self.mask

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise InputError(f"input width {x.shape[-1]} != layer in-dimension {self.n_in}")
        return x @ self.effective_weights().T + self.bias

    def backward(
        self, x: np.ndarray, grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (grad_x, grad_weights, grad_bias) for cached input ``x``."""
        flat_x = x.reshape(-1, self.n_in)
        flat_g = grad_out.reshape(-1, self.n_out)
        grad_w = flat_g.T @ flat_x
        if self.mask is not None:
            grad_w *= self.mask
        grad_b = flat_g.sum(axis=0)
        grad_x = (grad_out @ self.effective_weights()).reshape(x.shape)
        return grad_x, grad_w, grad_b


class LayerNorm:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift.

    The stabilizer is small enough (1e-12) that the pre-affine output is unit
    variance to within 1e-9 for any non-degenerate input.
    """

    EPS = 1e-12

    def __init__(self, gain: np.ndarray, shift: np.ndarray) -> None:
        self.gain = np.asarray(gain, dtype=np.float64)
        self.shift = np.asarray(shift, dtype=np.float64)

    @classmethod
    def create(cls, width: int) -> "LayerNorm":
        return cls(np.ones(width), np.zeros(width))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        normed = (x - mean) * inv_std
        return normed * self.gain + self.shift, (normed, inv_std)

    def backward(
        self, cache: tuple, grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        normed, inv_std = cache
        grad_gain = np.sum(grad_out * normed, axis=tuple(range(grad_out.ndim - 1)))
        grad_shift = np.sum(grad_out, axis=tuple(range(grad_out.ndim - 1)))
        g = grad_out * self.gain
        g_mean = g.mean(axis=-1, keepdims=True)
        gn_mean = (g * normed).mean(axis=-1, keepdims=True)
        grad_x = inv_std * (g - g_mean - normed * gn_mean)
        return grad_x, grad_gain, grad_shift
