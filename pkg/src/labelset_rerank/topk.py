"""Exact enumeration of the k most probable label sets under independent marginals.

The most probable set is {i : p_i >= 0.5}. Any other set's log-probability is
that set's log-probability minus the sum of flip costs |log(p_i / (1 - p_i))|
over the toggled labels, so top-k enumeration reduces to listing flip subsets
in increasing total cost. Flip subsets are explored best-first with the
extend / replace-last frontier scheme over costs sorted ascending, which
reaches every subset exactly once and never pops a cheaper subset after a
more expensive one.

Subset costs are computed with ``math.fsum`` (exactly rounded), so
mathematically tied subsets compare exactly equal and ties resolve purely by
the deterministic policy: lexicographically smaller sorted flip-index list
first. Whole cost-tie layers are drained and sorted before anything is
emitted, which makes prefixes consistent across different k.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .core import Candidate, CandidateList, InputError, MarginalPrediction


def flip_costs(marginal: MarginalPrediction) -> np.ndarray:
    """Per-label cost |log(p / (1 - p))| of toggling a label out of the MAP set."""
    p = marginal.probs
    return np.abs(np.log(p) - np.log1p(-p))


def map_logprob(marginal: MarginalPrediction) -> float:
    """Log-probability of the MAP set {i : p_i >= 0.5}."""
    p = marginal.probs
    best = np.where(p >= 0.5, np.log(p), np.log1p(-p))
    return math.fsum(best.tolist())


def enumerate_top_sets(marginal: MarginalPrediction, k: int) -> CandidateList:
    """Return the min(k, 2^|Y|) most probable label sets, best first.

    Output order is non-increasing base_logprob; exact cost ties are broken
    by the lexicographically smaller sorted flip-index list. When k exceeds
    the number of subsets the list is truncated, not an error.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    n = marginal.n_labels
    costs = flip_costs(marginal)
    base = map_logprob(marginal)
    map_members = frozenset(int(i) for i in np.flatnonzero(marginal.probs >= 0.5))

    # Position q in the search corresponds to original label order_[q];
    # positions are sorted by (cost, label index) so frontier costs only grow.
    order = sorted(range(n), key=lambda i: (costs[i], i))
    pos_cost = [float(costs[i]) for i in order]

    limit = min(k, 2**n)
    candidates: list[Candidate] = []

    def make_candidate(flip_key: tuple[int, ...], cost: float) -> Candidate:
        members = tuple(sorted(map_members.symmetric_difference(flip_key)))
        return Candidate(members=members, base_logprob=base - cost)

    # Heap entries: (exact subset cost, flip labels sorted ascending, positions).
    heap: list[tuple[float, tuple[int, ...], tuple[int, ...]]] = [(0.0, (), ())]
    while heap and len(candidates) < limit:
        layer_cost = heap[0][0]
        layer = []
        while heap and heap[0][0] == layer_cost:
            layer.append(heapq.heappop(heap))
        # Children that tie the current cost join the layer so the whole tie
        # group is sorted together; costlier children go back to the frontier.
        i = 0
        while i < len(layer):
            _, _, positions = layer[i]
            i += 1
            nxt = (positions[-1] if positions else -1) + 1
            if nxt >= n:
                continue
            children = [positions + (nxt,)]
            if positions:
                children.append(positions[:-1] + (nxt,))
            for child in children:
                cost = math.fsum(pos_cost[q] for q in child)
                key = tuple(sorted(order[q] for q in child))
                entry = (cost, key, child)
                if cost == layer_cost:
                    layer.append(entry)
                else:
                    heapq.heappush(heap, entry)
        layer.sort(key=lambda e: e[1])
        for cost, key, _ in layer:
            if len(candidates) == limit:
                break
            candidates.append(make_candidate(key, cost))

    return CandidateList(instance_id=marginal.instance_id, candidates=candidates)
