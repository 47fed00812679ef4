import itertools
import math

import numpy as np
import pytest

from labelset_rerank.core import InputError, sets_to_indicator
from labelset_rerank.made import MadeDensityEstimator, length_penalized
from labelset_rerank.nn import grad_check

from oracles import made_conditionals_loops


def all_subsets(n):
    return [s for r in range(n + 1) for s in itertools.combinations(range(n), r)]


def small_model(n_labels=6, hidden=13, n_orderings=4, seed=0):
    return MadeDensityEstimator(
        hidden_units=hidden, n_orderings=n_orderings, seed=seed
    ).initialize(n_labels)


def test_zero_model_conditionals_are_half():
    model = small_model(4)
    for p in model.parameters().values():
        p[...] = 0.0
    for j in range(model.n_orderings):
        assert np.all(model.conditionals((0, 3), j) == 0.5)


def test_zero_model_log_joint():
    model = small_model(4)
    for p in model.parameters().values():
        p[...] = 0.0
    assert model.log_joint((1, 2)) == pytest.approx(4 * math.log(0.5), abs=1e-9)
    assert model.log_joint((1, 2)) == pytest.approx(-2.772589, abs=1e-6)


def test_autoregressive_property_bitwise():
    # Flipping input i' never changes conditional i when o(i') >= o(i).
    rng = np.random.default_rng(1)
    for seed in range(3):
        model = small_model(n_labels=7, hidden=19, n_orderings=3, seed=seed)
        for j in range(model.n_orderings):
            o = model.orderings_[j]
            for _ in range(10):
                members = tuple(int(i) for i in np.flatnonzero(rng.integers(0, 2, 7)))
                base = model.conditionals(members, j)
                for flip in range(7):
                    flipped = tuple(sorted(set(members) ^ {flip}))
                    probe = model.conditionals(flipped, j)
                    for i in range(7):
                        if o[flip] >= o[i]:
                            assert probe[i] == base[i]


def test_conditionals_match_scalar_loop_oracle():
    model = small_model(n_labels=8, hidden=11, n_orderings=2, seed=5)
    rng = np.random.default_rng(2)
    for j in range(2):
        for _ in range(5):
            members = tuple(int(i) for i in np.flatnonzero(rng.integers(0, 2, 8)))
            got = model.conditionals(members, j)
            expected = made_conditionals_loops(model, members, j)
            assert got == pytest.approx(expected, abs=1e-9)


def test_per_ordering_normalization_untrained():
    model = small_model(n_labels=8, hidden=21, n_orderings=5, seed=9)
    X = sets_to_indicator(all_subsets(8), 8)
    per = model._ordering_log_joint_matrix(X)
    for j in range(model.n_orderings):
        assert np.exp(per[j]).sum() == pytest.approx(1.0, abs=1e-9)
    assert np.exp(model.score_samples(X)).sum() == pytest.approx(1.0, abs=1e-6)


def test_single_ordering_reduces_to_product():
    model = MadeDensityEstimator(hidden_units=9, n_orderings=1, seed=3).initialize(5)
    members = (0, 3)
    assert model.log_joint(members) == pytest.approx(
        model.ordering_log_joint(members, 0), abs=1e-12
    )


def test_train_on_repeated_set_concentrates_mass():
    target = (0, 2)
    X = sets_to_indicator([target] * 128, 4)
    model = MadeDensityEstimator(
        hidden_units=24, n_orderings=3, epochs=30, batch_size=32,
        learning_rate=0.02, seed=0,
    ).fit(X)
    target_lp = model.log_joint(target)
    for other in all_subsets(4):
        if other != target:
            assert target_lp > model.log_joint(other)
    # retraining must keep improving the repeated set's probability
    shorter = MadeDensityEstimator(
        hidden_units=24, n_orderings=3, epochs=3, batch_size=32,
        learning_rate=0.02, seed=0,
    ).fit(X)
    assert target_lp > shorter.log_joint(target)


def test_training_loss_decreases():
    rng = np.random.default_rng(7)
    comp = np.array([[0.9, 0.9, 0.05, 0.05, 0.5], [0.05, 0.05, 0.9, 0.9, 0.5]])
    rows = comp[rng.integers(0, 2, 400)]
    X = (rng.random((400, 5)) < rows).astype(float)
    model = MadeDensityEstimator(
        hidden_units=16, n_orderings=4, epochs=12, batch_size=32,
        learning_rate=5e-3, seed=1,
    ).fit(X)
    first = model.loss_curve_[0]
    assert all(loss <= first for loss in model.loss_curve_[1:])
    assert model.loss_curve_[-1] < first


def test_fit_is_bitwise_deterministic():
    rng = np.random.default_rng(11)
    X = (rng.random((120, 6)) < 0.3).astype(float)
    a = MadeDensityEstimator(hidden_units=10, n_orderings=3, epochs=4, seed=42,
                             learning_rate=1e-3).fit(X)
    b = MadeDensityEstimator(hidden_units=10, n_orderings=3, epochs=4, seed=42,
                             learning_rate=1e-3).fit(X)
    for name, p in a.parameters().items():
        assert np.array_equal(p, b.parameters()[name]), name
    assert np.array_equal(a.orderings_, b.orderings_)
    assert np.array_equal(a.connectivity_, b.connectivity_)


def test_normalization_after_training():
    rng = np.random.default_rng(13)
    X = (rng.random((200, 7)) < 0.35).astype(float)
    model = MadeDensityEstimator(hidden_units=12, n_orderings=3, epochs=5,
                                 learning_rate=1e-3, seed=2).fit(X)
    probe = sets_to_indicator(all_subsets(7), 7)
    per = model._ordering_log_joint_matrix(probe)
    for j in range(model.n_orderings):
        assert np.exp(per[j]).sum() == pytest.approx(1.0, abs=1e-9)
    assert np.exp(model.score_samples(probe)).sum() == pytest.approx(1.0, abs=1e-6)


def test_bce_gradients_match_finite_differences():
    model = small_model(n_labels=5, hidden=9, n_orderings=3, seed=7)
    nudge = np.random.default_rng(3)
    for p in model.parameters().values():
        p += nudge.normal(0.0, 0.05, p.shape)  # off the relu kinks
    batch = (np.random.default_rng(4).random((8, 5)) < 0.4).astype(float)
    err = grad_check(
        model.parameters(),
        lambda: model.loss_and_grads(batch, 1)[0],
        lambda: model.loss_and_grads(batch, 1)[1],
        rng=np.random.default_rng(5),
        samples_per_tensor=20,
    )
    assert err < 1e-4


def test_masked_weight_gradients_exactly_zero():
    model = small_model(n_labels=6, hidden=11, n_orderings=2, seed=8)
    batch = (np.random.default_rng(6).random((10, 6)) < 0.5).astype(float)
    for j in range(2):
        _, grads = model.loss_and_grads(batch, j)
        in_mask, out_mask = model.masks(j)
        assert np.all(grads["hidden.weights"][in_mask == 0.0] == 0.0)
        assert np.all(grads["output.weights"][out_mask == 0.0] == 0.0)


def test_rerank_score_conventions():
    model = small_model(4)
    for p in model.parameters().values():
        p[...] = 0.0
    # beta = 0 leaves the log joint untouched
    sets = [(0, 1), (2,), ()]
    assert model.rerank_score(sets, 0.0) == pytest.approx(model.set_scores(sets), abs=1e-12)
    # singleton sets are immune to beta
    assert model.rerank_score([(2,)], 5.0)[0] == pytest.approx(model.log_joint((2,)), abs=1e-12)
    # composed zero-parameter case: log(0.5^4) / 2
    assert model.rerank_score([(0, 1)], 1.0)[0] == pytest.approx(-2.772589 / 2, abs=1e-6)
    # empty set keeps the raw log joint (no division)
    assert model.rerank_score([()], 1.0)[0] == pytest.approx(model.log_joint(()), abs=1e-12)


def test_length_penalty_lifts_larger_sets():
    raw = np.array([-10.0, -10.0])
    sizes = np.array([2.0, 5.0])
    for beta in (0.25, 0.5, 1.0):
        scores = length_penalized(raw, sizes, beta)
        assert scores[0] < scores[1]


def test_fit_rejects_bad_input():
    with pytest.raises(InputError):
        MadeDensityEstimator().fit(np.zeros((0, 4)))
    with pytest.raises(InputError):
        MadeDensityEstimator().fit(np.array([[0.0, 0.5]]))


def test_ordering_bounds_checked():
    model = small_model(4)
    with pytest.raises(InputError):
        model.conditionals((0,), 99)


def test_sklearn_clone_compatible():
    from sklearn.base import clone

    model = MadeDensityEstimator(hidden_units=7, n_orderings=2, seed=3)
    twin = clone(model)
    assert twin.get_params() == model.get_params()


def test_paper_scale_defaults():
    model = MadeDensityEstimator()
    assert model.hidden_units == 500
    assert model.n_orderings == 10
    assert model.epochs == 30
    assert model.batch_size == 64
    assert model.learning_rate == 2e-5
