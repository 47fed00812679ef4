import numpy as np
import pytest

from labelset_rerank.core import Candidate, CandidateList, InputError
from labelset_rerank.metrics import (
    avg_best_rank,
    bucketed_f1,
    format_eval_table,
    frequency_buckets,
    instance_f1,
    label_frequencies,
    micro_macro_f1,
)

from oracles import counting_micro_macro


def random_corpus(rng, n_instances, n_labels):
    predictions, gold = {}, {}
    for i in range(n_instances):
        key = f"doc{i}"
        predictions[key] = tuple(int(j) for j in np.flatnonzero(rng.random(n_labels) < 0.3))
        gold[key] = tuple(int(j) for j in np.flatnonzero(rng.random(n_labels) < 0.3))
    return predictions, gold


def test_perfect_predictions():
    gold = {"a": (0, 2), "b": (1,), "c": ()}
    report = micro_macro_f1(gold, gold, 3)
    assert report.micro_f1 == 1.0
    assert report.macro_f1 == 1.0


def test_hand_computed_confusion_case():
    gold = {"x": (0, 1, 2)}
    predictions = {"x": (0, 1, 3)}
    report = micro_macro_f1(predictions, gold, 5)
    assert report.micro_f1 == pytest.approx(0.6667, abs=1e-4)


def test_matches_counting_oracle_exactly():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n_labels = int(rng.integers(2, 12))
        predictions, gold = random_corpus(rng, int(rng.integers(1, 25)), n_labels)
        report = micro_macro_f1(predictions, gold, n_labels)
        micro, macro = counting_micro_macro(predictions, gold, n_labels)
        assert report.micro_f1 == micro
        assert report.macro_f1 == macro


def test_macro_counts_absent_labels_as_zero():
    gold = {"a": (0,)}
    predictions = {"a": (0,)}
    report = micro_macro_f1(predictions, gold, 4)
    assert report.micro_f1 == 1.0
    assert report.macro_f1 == pytest.approx(0.25)


def test_key_mismatch_rejected():
    with pytest.raises(InputError):
        micro_macro_f1({"a": ()}, {"b": ()}, 2)


def test_adding_correct_label_never_hurts():
    rng = np.random.default_rng(1)
    for _ in range(30):
        predictions, gold = random_corpus(rng, 10, 8)
        base = micro_macro_f1(predictions, gold, 8).micro_f1
        key = rng.choice(sorted(gold))
        missing = set(gold[key]) - set(predictions[key])
        wrong = set(range(8)) - set(gold[key]) - set(predictions[key])
        if missing:
            better = dict(predictions)
            better[key] = tuple(sorted(set(predictions[key]) | {missing.pop()}))
            assert micro_macro_f1(better, gold, 8).micro_f1 >= base
        if wrong:
            worse = dict(predictions)
            worse[key] = tuple(sorted(set(predictions[key]) | {wrong.pop()}))
            assert micro_macro_f1(worse, gold, 8).micro_f1 <= base


def test_instance_f1_conventions():
    assert instance_f1((), ()) == 1.0
    assert instance_f1((0,), ()) == 0.0
    assert instance_f1((0, 1), (0, 2)) == pytest.approx(0.5)


def test_avg_best_rank_top_hit():
    gold = {"a": (0, 1), "b": (2,)}
    lists = [
        CandidateList("a", [Candidate((0, 1), -1.0), Candidate((0,), -2.0)]),
        CandidateList("b", [Candidate((2,), -0.5), Candidate((), -1.5)]),
    ]
    assert avg_best_rank(lists, gold) == 1.0


def test_avg_best_rank_mean_of_ranks():
    gold = {"a": (0,), "b": (1,)}
    lists = [
        CandidateList("a", [Candidate((1,), -1.0), Candidate((2,), -2.0), Candidate((0,), -3.0)]),
        CandidateList("b", [Candidate((0,), -1.0), Candidate((2,), -2.0), Candidate((3,), -3.0),
                            Candidate((0, 2), -3.5), Candidate((1,), -4.0)]),
    ]
    assert avg_best_rank(lists, gold) == pytest.approx((3 + 5) / 2)


def test_avg_best_rank_tie_takes_lowest_rank():
    gold = {"a": (0,)}
    lists = [CandidateList("a", [Candidate((1,), -1.0), Candidate((2,), -2.0)])]
    assert avg_best_rank(lists, gold) == 1.0


def test_avg_best_rank_bounded_by_list_length():
    rng = np.random.default_rng(2)
    gold = {}
    lists = []
    k = 6
    for i in range(20):
        key = f"d{i}"
        gold[key] = tuple(int(j) for j in np.flatnonzero(rng.random(7) < 0.4))
        cands = [
            Candidate(tuple(int(j) for j in np.flatnonzero(rng.random(7) < 0.4)), -float(r))
            for r in range(k)
        ]
        lists.append(CandidateList(key, cands))
    value = avg_best_rank(lists, gold)
    assert 1.0 <= value <= k


def test_label_frequencies_and_buckets():
    sets = [(0, 1), (0,), (0, 2), (1,)]
    freq = label_frequencies(sets, 4)
    assert freq.tolist() == [3, 2, 1, 0]
    buckets = frequency_buckets(freq, 2)
    assert [b.tolist() for b in buckets] == [[0, 1], [2, 3]]
    with pytest.raises(InputError):
        frequency_buckets(freq, 5)


def test_bucketed_f1_single_bucket_equals_overall():
    rng = np.random.default_rng(3)
    predictions, gold = random_corpus(rng, 15, 6)
    freq = label_frequencies(list(gold.values()), 6)
    overall = micro_macro_f1(predictions, gold, 6).micro_f1
    assert bucketed_f1(predictions, gold, freq, 1) == [overall]


def test_bucketed_f1_uniform_perfect():
    gold = {f"d{i}": (i % 4,) for i in range(8)}
    freq = label_frequencies(list(gold.values()), 4)
    scores = bucketed_f1(gold, gold, freq, 4)
    assert scores == [1.0, 1.0, 1.0, 1.0]


def test_bucketed_f1_pooled_counts_recombine():
    rng = np.random.default_rng(4)
    predictions, gold = random_corpus(rng, 30, 9)
    freq = label_frequencies(list(gold.values()), 9)
    # pooled counts across buckets must reproduce the overall micro F1
    from labelset_rerank.metrics import _pooled_counts, frequency_buckets as fb

    tp, fp, fn = _pooled_counts(predictions, gold, 9)
    total_micro = micro_macro_f1(predictions, gold, 9).micro_f1
    t = p = n = 0
    for labels in fb(freq, 3):
        t += tp[labels].sum()
        p += fp[labels].sum()
        n += fn[labels].sum()
    assert 2 * t / (2 * t + p + n) == pytest.approx(total_micro, abs=1e-12)


def test_sweep_candidate_counts_prefixes():
    from labelset_rerank.core import MarginalPrediction
    from labelset_rerank.metrics import sweep_candidate_counts
    from labelset_rerank.topk import enumerate_top_sets
    from labelset_rerank.made import length_penalized

    class Flat:
        def set_scores(self, sets):
            return np.zeros(len(sets))

        def penalized_scores(self, raw, sizes, beta):
            return length_penalized(raw, sizes, beta)

        def rerank_score(self, sets, beta):
            return np.zeros(len(sets))

    rng = np.random.default_rng(5)
    gold, lists = {}, []
    for i in range(12):
        m = MarginalPrediction(f"d{i}", rng.uniform(0, 1, 5))
        lists.append(enumerate_top_sets(m, 8))
        gold[f"d{i}"] = tuple(int(j) for j in np.flatnonzero(rng.random(5) < 0.4))
    curve = sweep_candidate_counts(lists, gold, Flat(), alpha=5.0, beta=0.0,
                                   k_values=[1, 4, 8], n_labels=5)
    assert [k for k, _ in curve] == [1, 4, 8]
    # k=1 equals the base prediction regardless of alpha
    base_preds = {c.instance_id: c.candidates[0].members for c in lists}
    assert curve[0][1].micro_f1 == micro_macro_f1(base_preds, gold, 5).micro_f1
    with pytest.raises(InputError):
        sweep_candidate_counts(lists, gold, Flat(), 0.0, 0.0, [9], 5)
    with pytest.raises(InputError):
        sweep_candidate_counts(lists, gold, Flat(), 0.0, 0.0, [0], 5)


def test_micro_f1_invariant_to_label_relabeling():
    rng = np.random.default_rng(6)
    predictions, gold = random_corpus(rng, 20, 7)
    perm = rng.permutation(7)
    relabel = lambda sets: {k: tuple(sorted(int(perm[i]) for i in v)) for k, v in sets.items()}
    a = micro_macro_f1(predictions, gold, 7)
    b = micro_macro_f1(relabel(predictions), relabel(gold), 7)
    assert a.micro_f1 == b.micro_f1
    assert a.macro_f1 == pytest.approx(b.macro_f1, abs=1e-12)


def test_format_eval_table_alignment():
    text = format_eval_table([("base", 0.5, 0.25), ("reranked", 0.625, 0.3)])
    lines = text.splitlines()
    assert len(lines) == 3
    assert "micro_f1" in lines[0]
    assert lines[1].startswith("base")
