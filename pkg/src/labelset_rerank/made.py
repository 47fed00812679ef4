"""Masked autoencoder density estimator over binary label vectors.

A single pair of dense layers is shared by n random autoregressive orderings;
only the binary connection masks differ per ordering. Under ordering o, a
hidden unit h carries a connectivity integer m(h) and the masks allow
input i -> h iff m(h) >= o(i) and h -> output i iff o(i) > m(h), so output i
depends exactly on the inputs that precede label i in the ordering. Each
ordering therefore defines a properly normalized autoregressive factorization
of the joint, and the model scores a set by the log of the arithmetic mean of
the per-ordering joint probabilities.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_indicator_matrix, check_label_sets
from .core import InputError, canonical_label_set, sets_to_indicator
from .nn import AdamOptimizer, DenseLayer, log_sigmoid, relu, relu_backward, sigmoid, softplus

_SCORE_CHUNK = 4096


def length_penalized(
    raw: np.ndarray,
    sizes: np.ndarray,
    beta: float,
    empty_score: float | None = None,
) -> np.ndarray:
    """Divide raw scores by |y|^beta; the penalty lifts larger sets.

    Empty sets are the one corner the formula does not define: they keep the
    raw score when ``empty_score`` is None, otherwise they get ``empty_score``.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    out = np.asarray(raw, dtype=np.float64).copy()
    nonempty = sizes > 0
    out[nonempty] = out[nonempty] / np.power(sizes[nonempty], beta)
    if empty_score is not None:
        out[~nonempty] = empty_score
    return out


class MadeDensityEstimator(BaseEstimator):
    """Label-set density estimator with masked autoregressive layers.

    Parameters
    ----------
    hidden_units : width of the single hidden layer (500 by default).
    n_orderings : number of autoregressive orderings averaged at scoring
        time and cycled round-robin during training.
    epochs, batch_size, learning_rate : Adam training schedule.
    seed : drives parameter init, orderings, connectivity, and data order;
        fixed seed means bitwise-identical fits.
    """

    def __init__(
        self,
        hidden_units: int = 500,
        n_orderings: int = 10,
        epochs: int = 30,
        batch_size: int = 64,
        learning_rate: float = 2e-5,
        seed: int = 0,
    ) -> None:
        self.hidden_units = hidden_units
        self.n_orderings = n_orderings
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    # -- construction -----------------------------------------------------

    def initialize(self, n_labels: int) -> "MadeDensityEstimator":
        """Build a fresh untrained network: seeded orderings, masks, weights."""
        if n_labels < 1:
            raise InputError(f"n_labels must be >= 1, got {n_labels}")
        if self.hidden_units < 1 or self.n_orderings < 1:
            raise InputError("hidden_units and n_orderings must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.n_labels_ = n_labels
        self.orderings_ = np.stack(
            [rng.permutation(n_labels) for _ in range(self.n_orderings)]
        ).astype(np.int64)
        self.connectivity_ = rng.integers(
            0, max(n_labels - 1, 1), size=(self.n_orderings, self.hidden_units)
        ).astype(np.int64)
        self.hidden_layer_ = DenseLayer.create(rng, self.hidden_units, n_labels)
        self.output_layer_ = DenseLayer.create(rng, n_labels, self.hidden_units)
        self.loss_curve_: list[float] = []
        self._train_rng = rng
        return self

    def masks(self, ordering: int) -> tuple[np.ndarray, np.ndarray]:
        """(input->hidden, hidden->output) binary masks for one ordering."""
        check_fitted(self, "orderings_")
        o = self.orderings_[ordering]
        m = self.connectivity_[ordering]
        input_mask = (m[:, None] >= o[None, :]).astype(np.float64)
        output_mask = (o[:, None] > m[None, :]).astype(np.float64)
        return input_mask, output_mask

    def parameters(self) -> dict[str, np.ndarray]:
        check_fitted(self, "hidden_layer_")
        return {
            "hidden.weights": self.hidden_layer_.weights,
            "hidden.bias": self.hidden_layer_.bias,
            "output.weights": self.output_layer_.weights,
            "output.bias": self.output_layer_.bias,
        }

    # -- forward / scoring -------------------------------------------------

    def _forward_logits(self, X: np.ndarray, ordering: int) -> tuple[np.ndarray, tuple]:
        input_mask, output_mask = self.masks(ordering)
        self.hidden_layer_.mask = input_mask
        self.output_layer_.mask = output_mask
        pre = self.hidden_layer_.forward(X)
        hidden = relu(pre)
        logits = self.output_layer_.forward(hidden)
        return logits, (X, pre, hidden)

    def conditionals(self, members: Sequence[int], ordering: int) -> np.ndarray:
        """P(y_i = 1 | values of the labels preceding i in the ordering).

        The conditioning is structural: the full binary vector goes in and
        the masks guarantee entry i never sees positions at or after o(i).
        """
        check_fitted(self, "hidden_layer_")
        if not 0 <= ordering < self.n_orderings:
            raise InputError(f"ordering index {ordering} outside [0, {self.n_orderings})")
        members = canonical_label_set(members, self.n_labels_)
        X = sets_to_indicator([members], self.n_labels_)
        logits, _ = self._forward_logits(X, ordering)
        return sigmoid(logits[0])

    def _ordering_log_joint_matrix(self, X: np.ndarray) -> np.ndarray:
        """Per-ordering log joint of each row; shape (n_orderings, n_rows)."""
        out = np.empty((self.n_orderings, X.shape[0]))
        for j in range(self.n_orderings):
            logits, _ = self._forward_logits(X, j)
            ll = np.where(X == 1.0, log_sigmoid(logits), log_sigmoid(-logits))
            out[j] = ll.sum(axis=1)
        return out

    def ordering_log_joint(self, members: Sequence[int], ordering: int) -> float:
        """Log joint probability of one set under a single ordering."""
        check_fitted(self, "hidden_layer_")
        members = canonical_label_set(members, self.n_labels_)
        X = sets_to_indicator([members], self.n_labels_)
        return float(self._ordering_log_joint_matrix(X)[ordering, 0])

    def score_samples(self, Y) -> np.ndarray:
        """Ensemble log joint: log of the mean per-ordering joint probability."""
        check_fitted(self, "hidden_layer_")
        X = self._as_indicator(Y)
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], _SCORE_CHUNK):
            block = X[start : start + _SCORE_CHUNK]
            per_ordering = self._ordering_log_joint_matrix(block)
            top = per_ordering.max(axis=0)
            mean = np.exp(per_ordering - top).sum(axis=0) / self.n_orderings
            out[start : start + block.shape[0]] = top + np.log(mean)
        return out

    def log_joint(self, members: Sequence[int]) -> float:
        """Ensemble log joint of a single set."""
        return float(self.score_samples([canonical_label_set(members, self.n_labels_)])[0])

    # -- scorer protocol ----------------------------------------------------

    def set_scores(self, sets: Sequence[Sequence[int]]) -> np.ndarray:
        """Raw reranker material: the ensemble log joint per set."""
        return self.score_samples(check_label_sets(sets, self.n_labels_))

    def penalized_scores(self, raw: np.ndarray, sizes: np.ndarray, beta: float) -> np.ndarray:
        """Log joint divided by |y|^beta; the empty set keeps its raw log joint."""
        return length_penalized(raw, sizes, beta)

    def rerank_score(self, sets: Sequence[Sequence[int]], beta: float) -> np.ndarray:
        sets = check_label_sets(sets, self.n_labels_)
        sizes = np.array([len(s) for s in sets], dtype=np.float64)
        return self.penalized_scores(self.set_scores(sets), sizes, beta)

    # -- training ------------------------------------------------------------

    def fit(self, Y) -> "MadeDensityEstimator":
        """Train on a corpus of label sets given as a binary indicator matrix.

        Minimizes the mean binary cross-entropy of all per-label conditionals;
        every minibatch uses the masks of one ordering, cycled round-robin.
        """
        X = check_indicator_matrix(Y)
        self.initialize(X.shape[1])
        rng = self._train_rng
        optimizer = AdamOptimizer(self.parameters(), learning_rate=self.learning_rate)
        n = X.shape[0]
        step = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, n, self.batch_size):
                batch = X[order[start : start + self.batch_size]]
                j = step % self.n_orderings
                step += 1
                epoch_loss += self._train_step(batch, j, optimizer)
                n_batches += 1
            self.loss_curve_.append(epoch_loss / n_batches)
        return self

    def _train_step(self, batch: np.ndarray, ordering: int, optimizer: AdamOptimizer) -> float:
        logits, (x, pre, hidden) = self._forward_logits(batch, ordering)
        # BCE in softplus form: y*softplus(-z) + (1-y)*softplus(z), mean over B*D.
        loss = float(
            np.mean(np.where(batch == 1.0, softplus(-logits), softplus(logits)))
        )
        grad_logits = (sigmoid(logits) - batch) / batch.size
        grad_hidden, grad_w_out, grad_b_out = self.output_layer_.backward(hidden, grad_logits)
        grad_pre = relu_backward(grad_hidden, pre)
        _, grad_w_in, grad_b_in = self.hidden_layer_.backward(x, grad_pre)
        optimizer.step(
            {
                "hidden.weights": grad_w_in,
                "hidden.bias": grad_b_in,
                "output.weights": grad_w_out,
                "output.bias": grad_b_out,
            }
        )
        return loss

    def loss_and_grads(self, batch: np.ndarray, ordering: int) -> tuple[float, dict[str, np.ndarray]]:
        """BCE loss and analytic gradients for one batch (used by grad checks)."""
        batch = check_indicator_matrix(batch, self.n_labels_)
        logits, (x, pre, hidden) = self._forward_logits(batch, ordering)
        loss = float(np.mean(np.where(batch == 1.0, softplus(-logits), softplus(logits))))
        grad_logits = (sigmoid(logits) - batch) / batch.size
        grad_hidden, grad_w_out, grad_b_out = self.output_layer_.backward(hidden, grad_logits)
        grad_pre = relu_backward(grad_hidden, pre)
        _, grad_w_in, grad_b_in = self.hidden_layer_.backward(x, grad_pre)
        return loss, {
            "hidden.weights": grad_w_in,
            "hidden.bias": grad_b_in,
            "output.weights": grad_w_out,
            "output.bias": grad_b_out,
        }

    def _as_indicator(self, Y) -> np.ndarray:
        if isinstance(Y, np.ndarray) and Y.ndim == 2:
            return check_indicator_matrix(Y, self.n_labels_)
        return sets_to_indicator(check_label_sets(Y, self.n_labels_), self.n_labels_)
