"""Self-attention set scorer trained with cloze-style masked-label prediction.

The encoder is a Transformer stack with the positional encodings removed:
labels in a set have no order, and without positional terms every layer is
permutation equivariant, so the score of a set cannot depend on how its
members were listed. A set is scored by pseudo-log-likelihood: mask one
member at a time, predict it from the rest, and sum the log-probabilities of
the true labels. That sum is an analogy to a joint log-probability, not an
exact one, and is used purely as a reranking signal.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_indicator_matrix, check_label_sets
from .core import InputError, canonical_label_set, indicator_to_sets
from .made import length_penalized
from .nn import (
    AdamOptimizer,
    DenseLayer,
    LayerNorm,
    multi_head_attention,
    multi_head_attention_backward,
    relu,
    relu_backward,
    softmax,
)

_SCORE_ROWS = 2048


class _EncoderLayer:
    """Pre-norm attention block followed by a pre-norm feed-forward block."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int, ff_width: int) -> None:
        self.n_heads = n_heads
        self.norm_attn = LayerNorm.create(width)
        self.query = DenseLayer.create(rng, width, width)
        self.key = DenseLayer.create(rng, width, width)
        self.value = DenseLayer.create(rng, width, width)
        self.out = DenseLayer.create(rng, width, width)
        self.norm_ff = LayerNorm.create(width)
        self.ff_in = DenseLayer.create(rng, ff_width, width)
        self.ff_out = DenseLayer.create(rng, width, ff_width)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        normed, norm_cache = self.norm_attn.forward(x)
        q = self.query.forward(normed)
        k = self.key.forward(normed)
        v = self.value.forward(normed)
        att, att_cache = multi_head_attention(q, k, v, self.n_heads)
        mid = x + self.out.forward(att)
        normed2, norm2_cache = self.norm_ff.forward(mid)
        pre = self.ff_in.forward(normed2)
        out = mid + self.ff_out.forward(relu(pre))
        cache = (normed, norm_cache, att, att_cache, normed2, norm2_cache, pre)
        return out, cache

    def backward(
        self, cache: tuple, grad_out: np.ndarray, grads: dict[str, np.ndarray], prefix: str
    ) -> np.ndarray:
        normed, norm_cache, att, att_cache, normed2, norm2_cache, pre = cache
        grad_ffa, gw, gb = self.ff_out.backward(relu(pre), grad_out)
        grads[prefix + "ff_out.weights"] += gw
        grads[prefix + "ff_out.bias"] += gb
        grad_pre = relu_backward(grad_ffa, pre)
        grad_normed2, gw, gb = self.ff_in.backward(normed2, grad_pre)
        grads[prefix + "ff_in.weights"] += gw
        grads[prefix + "ff_in.bias"] += gb
        grad_mid, ggain, gshift = self.norm_ff.backward(norm2_cache, grad_normed2)
        grads[prefix + "norm_ff.gain"] += ggain
        grads[prefix + "norm_ff.shift"] += gshift
        grad_mid = grad_mid + grad_out

        grad_att, gw, gb = self.out.backward(att, grad_mid)
        grads[prefix + "out.weights"] += gw
        grads[prefix + "out.bias"] += gb
        grad_q, grad_k, grad_v = multi_head_attention_backward(att_cache, grad_att)
        grad_normed = np.zeros_like(normed)
        for layer, g, name in (
            (self.query, grad_q, "query"),
            (self.key, grad_k, "key"),
            (self.value, grad_v, "value"),
        ):
            gx, gw, gb = layer.backward(normed, g)
            grad_normed += gx
            grads[prefix + name + ".weights"] += gw
            grads[prefix + name + ".bias"] += gb
        grad_x, ggain, gshift = self.norm_attn.backward(norm_cache, grad_normed)
        grads[prefix + "norm_attn.gain"] += ggain
        grads[prefix + "norm_attn.shift"] += gshift
        return grad_x + grad_mid

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in (
            ("query", self.query),
            ("key", self.key),
            ("value", self.value),
            ("out", self.out),
            ("ff_in", self.ff_in),
            ("ff_out", self.ff_out),
        ):
            out[prefix + name + ".weights"] = layer.weights
            out[prefix + name + ".bias"] = layer.bias
        out[prefix + "norm_attn.gain"] = self.norm_attn.gain
        out[prefix + "norm_attn.shift"] = self.norm_attn.shift
        out[prefix + "norm_ff.gain"] = self.norm_ff.gain
        out[prefix + "norm_ff.shift"] = self.norm_ff.shift
        return out


class MaskedAttentionScorer(BaseEstimator):
    """Scores label sets by masked-member prediction with a set transformer.

    Parameters
    ----------
    width : embedding and residual-stream width (256 by default).
    n_layers, n_heads : encoder depth and attention heads per layer (6 / 8).
    ff_width : feed-forward inner width; defaults to 4 * width.
    epochs, batch_size, learning_rate : Adam training schedule.
    seed : drives initialization, data order, and mask-slot choices.
    """

    def __init__(
        self,
        width: int = 256,
        n_layers: int = 6,
        n_heads: int = 8,
        ff_width: int | None = None,
        epochs: int = 30,
        batch_size: int = 64,
        learning_rate: float = 2e-5,
        seed: int = 0,
    ) -> None:
        self.width = width
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ff_width = ff_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    # -- construction -------------------------------------------------------

    def initialize(self, n_labels: int) -> "MaskedAttentionScorer":
        """Build a fresh untrained network over n_labels labels plus MASK."""
        if n_labels < 1:
            raise InputError(f"n_labels must be >= 1, got {n_labels}")
        if self.width < 1 or self.n_layers < 1:
            raise InputError("width and n_layers must be >= 1")
        if self.n_heads < 1 or self.width % self.n_heads != 0:
            raise InputError(f"width {self.width} not divisible by {self.n_heads} heads")
        ff_width = 4 * self.width if self.ff_width is None else self.ff_width
        if ff_width < 1:
            raise InputError("ff_width must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.n_labels_ = n_labels
        self.mask_id_ = n_labels
        # Every label gets an embedding row even if never seen in training,
        # so unseen candidate members score without any OOV handling.
        self.embedding_ = rng.normal(0.0, 0.02, size=(n_labels + 1, self.width))
        self.layers_ = [
            _EncoderLayer(rng, self.width, self.n_heads, ff_width) for _ in range(self.n_layers)
        ]
        self.final_norm_ = LayerNorm.create(self.width)
        self.head_ = DenseLayer.create(rng, n_labels, self.width)
        self.loss_curve_: list[float] = []
        self._train_rng = rng
        return self

    def parameters(self) -> dict[str, np.ndarray]:
        check_fitted(self, "embedding_")
        params: dict[str, np.ndarray] = {"embedding": self.embedding_}
        for i, layer in enumerate(self.layers_):
            params.update(layer.named_params(f"layer{i}."))
        params["final_norm.gain"] = self.final_norm_.gain
        params["final_norm.shift"] = self.final_norm_.shift
        params["head.weights"] = self.head_.weights
        params["head.bias"] = self.head_.bias
        return params

    def _zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(p) for name, p in self.parameters().items()}

    # -- forward / backward ---------------------------------------------------

    def _forward_logits(self, tokens: np.ndarray, slots: np.ndarray) -> tuple[np.ndarray, tuple]:
        """Logits over the label vocabulary at one slot per row.

        tokens : (B, T) int token ids (labels and MASK); slots : (B,) the
        position whose output feeds the head.
        """
        x = self.embedding_[tokens]
        layer_caches = []
        for layer in self.layers_:
            x, cache = layer.forward(x)
            layer_caches.append(cache)
        final, final_cache = self.final_norm_.forward(x)
        gathered = final[np.arange(tokens.shape[0]), slots]
        logits = self.head_.forward(gathered)
        return logits, (tokens, slots, layer_caches, final_cache, gathered, final.shape)

    def _backward(self, cache: tuple, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        grads = self._zero_grads()
        self._backward_into(cache, grad_logits, grads)
        return grads

    def _backward_into(
        self, cache: tuple, grad_logits: np.ndarray, grads: dict[str, np.ndarray]
    ) -> None:
        tokens, slots, layer_caches, final_cache, gathered, shape = cache
        grad_gathered, gw, gb = self.head_.backward(gathered, grad_logits)
        grads["head.weights"] += gw
        grads["head.bias"] += gb
        grad_final = np.zeros(shape)
        grad_final[np.arange(tokens.shape[0]), slots] = grad_gathered
        grad_x, ggain, gshift = self.final_norm_.backward(final_cache, grad_final)
        grads["final_norm.gain"] += ggain
        grads["final_norm.shift"] += gshift
        for i in range(len(self.layers_) - 1, -1, -1):
            grad_x = self.layers_[i].backward(layer_caches[i], grad_x, grads, f"layer{i}.")
        np.add.at(
            grads["embedding"], tokens.reshape(-1), grad_x.reshape(-1, self.width)
        )

    # -- scoring ----------------------------------------------------------------

    def cloze(self, members: Sequence[int], label: int) -> np.ndarray:
        """Distribution over all labels for ``label`` masked out of ``members``.

        The returned vector depends only on the surviving context, never on
        which label was hidden; a singleton set yields the context-free
        distribution conditioned on MASK alone.
        """
        check_fitted(self, "embedding_")
        members = canonical_label_set(members, self.n_labels_)
        if label not in members:
            raise InputError(f"label {label} is not a member of the set")
        slot = members.index(label)
        tokens = np.array([members], dtype=np.int64)
        tokens[0, slot] = self.mask_id_
        logits, _ = self._forward_logits(tokens, np.array([slot]))
        return softmax(logits[0])

    def pseudo_log_likelihood(self, members: Sequence[int]) -> float:
        """Sum over members of log P(member | rest); requires a non-empty set."""
        check_fitted(self, "embedding_")
        members = canonical_label_set(members, self.n_labels_)
        if len(members) == 0:
            raise InputError("pseudo-log-likelihood is undefined for the empty set")
        return float(self.pseudo_log_likelihoods([members])[0])

    def pseudo_log_likelihoods(self, sets: Sequence[Sequence[int]]) -> np.ndarray:
        """Batched pseudo-log-likelihood; masked variants are grouped by size."""
        check_fitted(self, "embedding_")
        sets = check_label_sets(sets, self.n_labels_)
        out = np.zeros(len(sets))
        by_size: dict[int, list[int]] = {}
        for idx, members in enumerate(sets):
            if len(members) == 0:
                raise InputError("pseudo-log-likelihood is undefined for the empty set")
            by_size.setdefault(len(members), []).append(idx)
        for size in sorted(by_size):
            indices = by_size[size]
            # One row per (set, masked slot); chunked to bound memory.
            rows_per_set = size
            sets_per_chunk = max(1, _SCORE_ROWS // rows_per_set)
            for start in range(0, len(indices), sets_per_chunk):
                chunk = indices[start : start + sets_per_chunk]
                tokens = np.array([sets[i] for i in chunk], dtype=np.int64)
                tokens = np.repeat(tokens, size, axis=0)
                slots = np.tile(np.arange(size), len(chunk))
                rows = np.arange(tokens.shape[0])
                targets = tokens[rows, slots].copy()
                tokens[rows, slots] = self.mask_id_
                logits, _ = self._forward_logits(tokens, slots)
                log_probs = logits - _logsumexp_rows(logits)
                picked = log_probs[rows, targets].reshape(len(chunk), size)
                out[chunk] = picked.sum(axis=1)
        return out

    # -- scorer protocol -----------------------------------------------------

    def set_scores(self, sets: Sequence[Sequence[int]]) -> np.ndarray:
        """Raw reranker material: pseudo-log-likelihood (0 for empty sets)."""
        sets = check_label_sets(sets, self.n_labels_)
        out = np.zeros(len(sets))
        nonempty = [i for i, s in enumerate(sets) if len(s) > 0]
        if nonempty:
            scores = self.pseudo_log_likelihoods([sets[i] for i in nonempty])
            out[np.array(nonempty)] = scores
        return out

    def penalized_scores(self, raw: np.ndarray, sizes: np.ndarray, beta: float) -> np.ndarray:
        """Pseudo-log-likelihood over |y|^beta; empty sets score 0."""
        return length_penalized(raw, sizes, beta, empty_score=0.0)

    def rerank_score(self, sets: Sequence[Sequence[int]], beta: float) -> np.ndarray:
        sets = check_label_sets(sets, self.n_labels_)
        sizes = np.array([len(s) for s in sets], dtype=np.float64)
        return self.penalized_scores(self.set_scores(sets), sizes, beta)

    # -- training ---------------------------------------------------------------

    def fit(self, Y) -> "MaskedAttentionScorer":
        """Train on label sets (indicator matrix); empty sets are skipped.

        Every step samples a batch, masks one uniformly random member per
        set, and takes a cross-entropy step on predicting the hidden label.
        """
        X = check_indicator_matrix(Y)
        sets = [s for s in indicator_to_sets(X) if len(s) > 0]
        if not sets:
            raise InputError("training corpus contains no non-empty label sets")
        self.initialize(X.shape[1])
        rng = self._train_rng
        optimizer = AdamOptimizer(self.parameters(), learning_rate=self.learning_rate)
        n = len(sets)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, n, self.batch_size):
                batch_idx = order[start : start + self.batch_size]
                batch = [sets[i] for i in batch_idx]
                slots = [int(rng.integers(len(s))) for s in batch]
                epoch_loss += self._train_step(batch, slots, optimizer)
                n_batches += 1
            self.loss_curve_.append(epoch_loss / n_batches)
        return self

    def _train_step(
        self,
        batch: list[tuple[int, ...]],
        slots: list[int],
        optimizer: AdamOptimizer,
    ) -> float:
        loss, grads = self.loss_and_grads(batch, slots)
        optimizer.step(grads)
        return loss

    def loss_and_grads(
        self, batch: Sequence[Sequence[int]], slots: Sequence[int]
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cloze cross-entropy and analytic gradients for one batch.

        ``slots[i]`` is the index (within the sorted set) of the member to
        mask. Sets of equal size are forwarded together.
        """
        batch = check_label_sets(batch, self.n_labels_)
        total = len(batch)
        grads = self._zero_grads()
        loss = 0.0
        by_size: dict[int, list[int]] = {}
        for idx, members in enumerate(batch):
            if len(members) == 0:
                raise InputError("cannot train on an empty label set")
            by_size.setdefault(len(members), []).append(idx)
        for size in sorted(by_size):
            indices = by_size[size]
            tokens = np.array([batch[i] for i in indices], dtype=np.int64)
            slot_arr = np.array([slots[i] for i in indices], dtype=np.int64)
            rows = np.arange(len(indices))
            targets = tokens[rows, slot_arr].copy()
            tokens[rows, slot_arr] = self.mask_id_
            logits, cache = self._forward_logits(tokens, slot_arr)
            log_probs = logits - _logsumexp_rows(logits)
            loss += float(-log_probs[rows, targets].sum()) / total
            grad_logits = np.exp(log_probs)
            grad_logits[rows, targets] -= 1.0
            grad_logits /= total
            self._backward_into(cache, grad_logits, grads)
        return loss, grads


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    top = x.max(axis=1, keepdims=True)
    return top + np.log(np.sum(np.exp(x - top), axis=1, keepdims=True))
