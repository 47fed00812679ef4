"""Multi-head scaled dot-product attention, batched, with hand-written backward.

No positional terms enter anywhere: attention over a token set is permutation
equivariant, which the set scorer relies on.
"""

from __future__ import annotations

import numpy as np

from ..core import InputError
from .layers import softmax, softmax_backward


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """(B, T, W) -> (B, H, T, W/H)."""
    b, t, w = x.shape
    return x.reshape(b, t, n_heads, w // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    """(B, H, T, D) -> (B, T, H*D)."""
    b, h, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)


def multi_head_attention(
    queries: np.ndarray, keys: np.ndarray, values: np.ndarray, n_heads: int
) -> tuple[np.ndarray, tuple]:
    """Per head: softmax(Q K^T / sqrt(d_head)) V; heads re-concatenated.

    Inputs are (B, T, W) with W divisible by n_heads. Returns the (B, T, W)
    head concatenation and a cache for the backward pass; the caller applies
    the output projection.
    """
    width = queries.shape[-1]
    if n_heads < 1 or width % n_heads != 0:
        raise InputError(f"width {width} not divisible by {n_heads} heads")
    q = _split_heads(queries, n_heads)
    k = _split_heads(keys, n_heads)
    v = _split_heads(values, n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    weights = softmax(scores, axis=-1)
    heads = weights @ v
    return _merge_heads(heads), (q, k, v, weights, scale, n_heads)


def multi_head_attention_backward(
    cache: tuple, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return gradients w.r.t. (queries, keys, values)."""
    q, k, v, weights, scale, n_heads = cache
    grad_heads = _split_heads(grad_out, n_heads)
    grad_weights = grad_heads @ v.transpose(0, 1, 3, 2)
    grad_v = weights.transpose(0, 1, 3, 2) @ grad_heads
    grad_scores = softmax_backward(grad_weights, weights, axis=-1) * scale
    grad_q = grad_scores @ k
    grad_k = grad_scores.transpose(0, 1, 3, 2) @ q
    return _merge_heads(grad_q), _merge_heads(grad_k), _merge_heads(grad_v)
