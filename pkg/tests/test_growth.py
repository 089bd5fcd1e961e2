"""Greedy growth, stopping rules, finetuning, and the axis baseline."""
import math

import numpy as np
import pytest

from conftest import make_stump

from obtree.em import TrainConfig
from obtree.growth import (
    GrowthConfig,
    best_axis_split,
    best_axis_stump_loglik,
    entropy_nats,
    fit_stump,
    finetune,
    grow_axis_tree,
    grow_greedy,
    information_gain,
    partition,
    realized_gain,
    weighted_leaf_entropy,
)
from obtree.inference import accuracy, route_batch
from obtree.synthetic import xor_oblique
from obtree.tree import Leaf, SampleSet, Split, Tree, axis_aligned_coef


def brute_best_gain(features, labels, num_classes):
    """Exhaustive axis search with entropies computed from scratch."""

    def entropy(ys):
        h = 0.0
        for k in range(num_classes):
            c = int(np.sum(ys == k))
            if c:
                p = c / ys.size
                h -= p * math.log(p)
        return h

    n = labels.size
    parent = entropy(labels)
    best = None
    for axis in range(features.shape[1]):
        values = np.unique(features[:, axis])
        for lo, hi in zip(values[:-1], values[1:]):
            t = 0.5 * (lo + hi)
            side = features[:, axis] > t
            gain = (parent - (np.sum(~side) / n) * entropy(labels[~side])
                    - (np.sum(side) / n) * entropy(labels[side]))
            if best is None or gain > best[0]:
                best = (gain, axis, t)
    return best


def quadrant_data():
    """Class equals the quadrant of the plane, perfectly axis separable."""
    rng = np.random.default_rng(60)
    X = rng.normal(size=(200, 2)) + np.sign(rng.normal(size=(200, 2))) * 2.0
    X = X[(np.abs(X[:, 0]) > 0.5) & (np.abs(X[:, 1]) > 0.5)]
    labels = (X[:, 0] > 0).astype(np.int64) * 2 + (X[:, 1] > 0).astype(np.int64)
    return SampleSet(X, labels, 4)


# -- entropy and gain ---------------------------------------------------------

def test_entropy_hand_values():
    assert entropy_nats([1, 1]) == 0.6931471805599453
    assert entropy_nats([5, 0]) == 0.0
    assert entropy_nats([2, 2, 2, 2]) == pytest.approx(math.log(4), rel=1e-15)
    with pytest.raises(ValueError):
        entropy_nats([0, 0])


def test_information_gain_hand_values():
    assert information_gain([4, 4], [4, 0], [0, 4]) == pytest.approx(
        math.log(2), rel=1e-15
    )
    assert information_gain([2, 2], [2, 1], [0, 1]) == pytest.approx(
        0.2157615543388357, abs=1e-15
    )
    assert information_gain([3, 3], [3, 3], [0, 0]) == 0.0


def test_information_gain_validates_counts():
    with pytest.raises(ValueError):
        information_gain([2, 2], [1, 1], [0, 0])
    with pytest.raises(ValueError):
        information_gain([0, 0], [0, 0], [0, 0])


def test_weighted_leaf_entropy_single_leaf():
    data = SampleSet(np.zeros((4, 1)), np.array([0, 0, 1, 1]), 2)
    tree = Tree.single_leaf(1, 2)
    assert weighted_leaf_entropy(tree, data) == pytest.approx(math.log(2))


def test_realized_gain_matches_information_gain():
    stump = make_stump(axis_aligned_coef(0, 0.0, 1), [0.5, 0.5], [0.5, 0.5])
    data = SampleSet(np.array([[-1.0], [-2.0], [1.0], [2.0]]),
                     np.array([0, 0, 1, 0]), 2)
    expected = information_gain([3, 1], [2, 0], [1, 1])
    assert realized_gain(stump, data) == pytest.approx(expected, rel=1e-15)


# -- stump fitting ------------------------------------------------------------

def test_fit_stump_flags_single_class_as_degenerate():
    data = SampleSet(np.random.default_rng(61).normal(size=(30, 2)),
                     np.zeros(30, dtype=np.int64), 2)
    fit = fit_stump(data, TrainConfig(epochs=3, batch_size=16, alpha=0.05))
    assert fit.degenerate and fit.gain == 0.0


def test_fit_stump_learns_a_plain_threshold():
    rng = np.random.default_rng(62)
    X = rng.uniform(-1, 1, size=(300, 1))
    labels = (X[:, 0] > 0.0).astype(np.int64)
    data = SampleSet(X, labels, 2)
    fit = fit_stump(data, TrainConfig(epochs=30, batch_size=64, alpha=0.05))
    assert not fit.degenerate
    assert fit.gain > 0.5 * math.log(2)
    assert accuracy(fit.tree, data) > 0.95


def test_partition_reproduces_sign_split():
    stump = make_stump(axis_aligned_coef(0, 0.0, 2), [0.5, 0.5], [0.5, 0.5])
    rng = np.random.default_rng(63)
    data = SampleSet(rng.normal(size=(50, 2)), rng.integers(0, 2, size=50), 2)
    left = partition(data, stump, 1)
    right = partition(data, stump, 2)
    np.testing.assert_array_equal(left.features[:, 0] <= 0,
                                  np.full(left.n, True))
    np.testing.assert_array_equal(right.features[:, 0] > 0,
                                  np.full(right.n, True))
    assert left.n + right.n == data.n
    with pytest.raises(ValueError):
        partition(data, stump, 0)


# -- greedy growth ------------------------------------------------------------

def stump_config(**kw):
    base = dict(epochs=15, batch_size=64, alpha=0.05, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_growth_config_validation():
    cfg = stump_config()
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg)
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg, max_depth=0)
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg, max_leaves=0)
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg, max_depth=2, min_samples=1)
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg, max_depth=2, min_purity=0.0)
    with pytest.raises(ValueError):
        GrowthConfig(stump=cfg, max_depth=2, expansion="widest_first")


def test_grow_respects_max_depth(xor_train):
    tree, trace = grow_greedy(xor_train,
                              GrowthConfig(stump=stump_config(), max_depth=2))
    assert tree.depth() <= 2
    assert any(r.frozen == "" for r in trace)
    reasons = {r.frozen for r in trace if r.frozen}
    assert reasons <= {"max_depth", "degenerate", "min_samples", "min_purity"}


def test_grow_respects_max_leaves(xor_train):
    tree, trace = grow_greedy(
        xor_train,
        GrowthConfig(stump=stump_config(), max_leaves=3,
                     expansion="best_first"),
    )
    assert tree.num_leaves <= 3
    assert any(r.frozen == "max_leaves" for r in trace) or tree.num_leaves < 3


def test_grow_freezes_small_and_pure_subsets():
    X = np.array([[-1.0], [-1.1], [1.0], [1.1], [1.2]])
    labels = np.array([0, 0, 1, 1, 1])
    data = SampleSet(X, labels, 2)
    tree, trace = grow_greedy(
        data, GrowthConfig(stump=stump_config(epochs=25), max_depth=4)
    )
    # both children of the first split are pure, so they freeze
    reasons = [r.frozen for r in trace if r.frozen]
    assert "degenerate" in reasons or "min_purity" in reasons or "min_samples" in reasons
    assert accuracy(tree, data) == 1.0

    _, trace2 = grow_greedy(
        data,
        GrowthConfig(stump=stump_config(epochs=25), max_depth=4,
                     min_purity=0.9),
    )
    assert any(r.frozen == "min_purity" for r in trace2)


def test_grow_single_class_data_stays_single_leaf():
    data = SampleSet(np.random.default_rng(64).normal(size=(20, 2)),
                     np.ones(20, dtype=np.int64), 2)
    tree, trace = grow_greedy(data, GrowthConfig(stump=stump_config(),
                                                 max_depth=3))
    assert tree.num_leaves == 1
    assert trace[0].frozen == "degenerate"
    np.testing.assert_allclose(tree.nodes[0].probs, [0.0, 1.0])


def test_grow_trace_subset_sizes_partition_the_data(xor_train):
    tree, trace = grow_greedy(xor_train,
                              GrowthConfig(stump=stump_config(), max_depth=2))
    frozen_total = sum(r.subset_size for r in trace if r.frozen)
    assert frozen_total == xor_train.n  # frozen leaves tile the dataset
    ids = route_batch(tree, xor_train.features)
    assert set(np.unique(ids)) <= set(tree.leaf_ids())


def test_grow_is_deterministic_and_seed_sensitive(xor_train):
    small = xor_train.subset(np.arange(500))
    t1, _ = grow_greedy(small, GrowthConfig(stump=stump_config(), max_depth=2))
    t2, _ = grow_greedy(small, GrowthConfig(stump=stump_config(), max_depth=2))
    np.testing.assert_array_equal(t1.coef_matrix(), t2.coef_matrix())
    t3, _ = grow_greedy(small, GrowthConfig(stump=stump_config(seed=9),
                                            max_depth=2))
    assert not np.array_equal(t1.coef_matrix(), t3.coef_matrix())


def test_best_first_prefers_higher_gain():
    # left half is pure, right half needs one more split; best_first with a
    # three-leaf budget must spend the second split on the mixed side
    rng = np.random.default_rng(65)
    x = rng.uniform(-2, 2, size=(400, 1))
    labels = np.where(x[:, 0] < 0, 0, np.where(x[:, 0] < 1, 0, 1))
    data = SampleSet(x, labels.astype(np.int64), 2)
    tree, _ = grow_greedy(
        data,
        GrowthConfig(stump=stump_config(epochs=30), max_leaves=3,
                     expansion="best_first"),
    )
    assert accuracy(tree, data) > 0.95


def test_finetune_keeps_topology(xor_train):
    small = xor_train.subset(np.arange(600))
    tree, _ = grow_greedy(small, GrowthConfig(stump=stump_config(), max_depth=2))
    kinds_before = [type(nd).__name__ for nd in tree.nodes]
    coef_before = tree.coef_matrix().copy()
    log = finetune(tree, small, stump_config(epochs=10), "em")
    assert [type(nd).__name__ for nd in tree.nodes] == kinds_before
    assert len(log) == 10
    assert not np.array_equal(tree.coef_matrix(), coef_before)


def test_unknown_strategy_rejected(xor_train):
    with pytest.raises(ValueError):
        grow_greedy(xor_train, GrowthConfig(stump=stump_config(), max_depth=1),
                    "simulated_annealing")


# -- axis baseline ------------------------------------------------------------

def test_best_axis_split_matches_brute_force():
    rng = np.random.default_rng(66)
    for _ in range(20):
        n = int(rng.integers(5, 60))
        p = int(rng.integers(1, 4))
        k = int(rng.integers(2, 4))
        X = np.round(rng.normal(size=(n, p)), 2)
        y = rng.integers(0, k, size=n)
        found = best_axis_split(X, y, k)
        expected = brute_best_gain(X, y, k)
        if expected is None or expected[0] <= 0:
            continue
        assert found is not None
        assert found[2] == pytest.approx(expected[0], abs=1e-12)


def test_best_axis_split_handles_constant_features():
    X = np.ones((10, 2))
    y = np.arange(10) % 2
    assert best_axis_split(X, y, 2) is None


def test_axis_stump_likelihood_search_agrees_with_gain_search():
    rng = np.random.default_rng(67)
    for _ in range(5):
        n = int(rng.integers(8, 40))
        X = np.round(rng.normal(size=(n, 2)), 1)
        y = rng.integers(0, 2, size=n)
        data = SampleSet(X, y, 2)
        by_gain = best_axis_split(X, y, 2)
        by_ll = best_axis_stump_loglik(data)
        if by_gain is None:
            continue
        assert by_ll is not None
        assert by_ll[2] == pytest.approx(by_gain[2], abs=1e-9)


def test_grow_axis_tree_separates_quadrants():
    data = quadrant_data()
    tree = grow_axis_tree(data, max_depth=2)
    assert accuracy(tree, data) == 1.0
    assert tree.depth() <= 2
    shallow = grow_axis_tree(data, max_depth=1)
    assert shallow.depth() <= 1
    assert accuracy(shallow, data) < 1.0


def test_grow_axis_tree_on_pure_data_is_a_leaf():
    data = SampleSet(np.random.default_rng(68).normal(size=(10, 2)),
                     np.zeros(10, dtype=np.int64), 2)
    tree = grow_axis_tree(data, max_depth=3)
    assert tree.num_leaves == 1
