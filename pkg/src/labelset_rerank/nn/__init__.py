"""Minimal numpy neural substrate shared by the two set scorers.

Everything runs on 64-bit floats so finite-difference gradient checks stay
sharp, and every source of randomness is an explicit seeded generator.
"""

from .layers import (
    DenseLayer,
    LayerNorm,
    glorot_uniform,
    log_sigmoid,
    relu,
    relu_backward,
    sigmoid,
    softmax,
    softplus,
)
from .attention import multi_head_attention, multi_head_attention_backward
from .optim import AdamOptimizer
from .gradcheck import grad_check

__all__ = [
    "AdamOptimizer",
    "DenseLayer",
    "LayerNorm",
    "glorot_uniform",
    "grad_check",
    "log_sigmoid",
    "multi_head_attention",
    "multi_head_attention_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "softmax",
    "softplus",
]
