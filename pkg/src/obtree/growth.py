"""Greedy structure learning and whole-tree finetuning.

A tree is grown from a single leaf by repeatedly training a fresh stump on
the samples that reach a leaf deterministically and grafting the stump in
its place. Leaves freeze instead of splitting when a stopping criterion
fires (depth or leaf caps, too few samples, high purity, or a degenerate
stump). Expansion proceeds either level by level (depth_first) or by a
priority queue on the realized information gain of the already-trained
candidate stumps (best_first, ties broken by leaf creation index).

After growth, finetune retrains every split and leaf of the fixed topology
jointly with a fresh annealing schedule and fresh optimizer states.

The axis-restricted helpers at the bottom implement classic exhaustive
information-gain induction. They serve as a baseline and as an independent
check: a stump's hard-routing log-likelihood improvement per sample equals
the information gain of its partition, so likelihood search over the same
axis-aligned candidates must select a split of identical quality.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .alternating import fit_alternating, leaf_counts
from .em import TrainConfig, fit_em, log_likelihood
from .errors import TreeStructureError
from .inference import HARD, route_batch
from .tree import (
    Leaf,
    SampleSet,
    Split,
    Tree,
    axis_aligned_coef,
    new_stump,
    replace_leaf_with_stump,
)

# Realized gains below this mark a stump as degenerate.
GAIN_TOL = 1e-12


@dataclass
class GrowthConfig:
    stump: TrainConfig
    max_depth: int | None = None
    max_leaves: int | None = None
    min_purity: float | None = None
    min_samples: int = 2
    expansion: str = "depth_first"

    def __post_init__(self):
        if self.expansion not in ("depth_first", "best_first"):
            raise ValueError(f"unknown expansion order {self.expansion!r}")
        if self.max_depth is None and self.max_leaves is None:
            raise ValueError("set max_depth or max_leaves")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be positive")
        if self.min_samples < 2:
            raise ValueError("min_samples must be at least 2")
        if self.min_purity is not None and not 0 < self.min_purity <= 1:
            raise ValueError("min_purity must lie in (0, 1]")


@dataclass
class GrowthTraceRow:
    step: int
    leaf_id: int
    subset_size: int
    gain: float
    frozen: str  # stopping reason, empty when the leaf was expanded


class StumpFit(NamedTuple):
    tree: Tree
    degenerate: bool
    gain: float


def _fit(tree: Tree, data: SampleSet, config: TrainConfig, strategy: str):
    if strategy == "em":
        return fit_em(tree, data, config)
    if strategy == "alternating":
        return fit_alternating(tree, data, config)
    raise ValueError(f"unknown strategy {strategy!r}")


def entropy_nats(counts) -> float:
    """Entropy of a count vector in nats; zero counts contribute zero."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n <= 0:
        raise ValueError("entropy of an empty count vector")
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def information_gain(parent_counts, left_counts, right_counts) -> float:
    """Entropy drop of splitting parent_counts into the two child count vectors."""
    parent = np.asarray(parent_counts, dtype=np.int64)
    left = np.asarray(left_counts, dtype=np.int64)
    right = np.asarray(right_counts, dtype=np.int64)
    if parent.sum() <= 0:
        raise ValueError("parent counts are empty")
    if not np.array_equal(left + right, parent):
        raise ValueError("child counts must add up to the parent counts")
    n = parent.sum()
    nl = left.sum()
    nr = right.sum()
    gain = entropy_nats(parent)
    if nl > 0:
        gain -= (nl / n) * entropy_nats(left)
    if nr > 0:
        gain -= (nr / n) * entropy_nats(right)
    return float(gain)


def weighted_leaf_entropy(tree: Tree, data: SampleSet) -> float:
    """Sum over leaves of (share of samples routed there) times the entropy
    of the hard class counts at that leaf."""
    counts, totals = leaf_counts(tree, data)
    total = totals.sum()
    value = 0.0
    for row in range(counts.shape[0]):
        if totals[row] > 0:
            value += (totals[row] / total) * entropy_nats(counts[row])
    return float(value)


def realized_gain(stump: Tree, data: SampleSet) -> float:
    """Information gain of the stump's hard partition of the data."""
    counts, _ = leaf_counts(stump, data)
    return information_gain(counts.sum(axis=0), counts[0], counts[1])


def fit_stump(data: SampleSet, config: TrainConfig, strategy: str = "em") -> StumpFit:
    """Train a fresh stump on the data; flags single-class or zero-gain fits."""
    rng = np.random.default_rng(config.seed)
    stump = new_stump(data.dim, data.num_classes, rng)
    if np.unique(data.labels).size < 2:
        return StumpFit(stump, True, 0.0)
    _fit(stump, data, config, strategy)
    gain = realized_gain(stump, data)
    return StumpFit(stump, gain < GAIN_TOL, gain)


def partition(data: SampleSet, tree: Tree, leaf_id: int) -> SampleSet:
    """Samples routed deterministically to the given leaf."""
    if not isinstance(tree.nodes[leaf_id], Leaf):
        raise TreeStructureError(f"node {leaf_id} is not a leaf")
    ids = route_batch(tree, data.features)
    return data.subset(ids == leaf_id)


def _stump_seed(base_seed: int, leaf_id: int) -> int:
    # One deterministic stream per expansion site, independent of the order
    # in which sites are trained.
    return int(np.random.SeedSequence([base_seed, leaf_id]).generate_state(1)[0])


def _freeze_reason(growth: GrowthConfig, labels: np.ndarray, depth: int) -> str:
    if growth.max_depth is not None and depth >= growth.max_depth:
        return "max_depth"
    if labels.size < growth.min_samples:
        return "min_samples"
    if growth.min_purity is not None and labels.size:
        purity = np.bincount(labels).max() / labels.size
        if purity >= growth.min_purity:
            return "min_purity"
    return ""


def grow_greedy(data: SampleSet, growth: GrowthConfig, strategy: str = "em"):
    """Grow a tree greedily from a single leaf; returns (tree, trace).

    The trace holds one row per considered leaf: expanded rows carry the
    realized gain of the installed stump, frozen rows carry the reason.
    """
    counts = data.class_counts()
    tree = Tree.single_leaf(data.dim, data.num_classes, counts / counts.sum())
    trace: list[GrowthTraceRow] = []
    step = 0

    def train_candidate(leaf_id, idx):
        subset = data.subset(idx)
        cfg = replace(growth.stump, seed=_stump_seed(growth.stump.seed, leaf_id))
        return fit_stump(subset, cfg, strategy)

    def install(leaf_id, idx, fit: StumpFit):
        nonlocal step
        step += 1
        replace_leaf_with_stump(tree, leaf_id, fit.tree)
        left_id, right_id = len(tree.nodes) - 2, len(tree.nodes) - 1
        root = fit.tree.nodes[fit.tree.root]
        side = data.features[idx] @ root.coef[:-1] + root.coef[-1] > 0
        trace.append(GrowthTraceRow(step, leaf_id, len(idx), fit.gain, ""))
        return (left_id, idx[~side]), (right_id, idx[side])

    def freeze(leaf_id, idx, reason, gain=float("nan")):
        trace.append(GrowthTraceRow(step, leaf_id, len(idx), gain, reason))

    all_idx = np.arange(data.n)
    if growth.expansion == "depth_first":
        queue = deque([(0, all_idx, 0)])
        while queue:
            leaf_id, idx, depth = queue.popleft()
            if growth.max_leaves is not None and tree.num_leaves >= growth.max_leaves:
                freeze(leaf_id, idx, "max_leaves")
                continue
            reason = _freeze_reason(growth, data.labels[idx], depth)
            if reason:
                freeze(leaf_id, idx, reason)
                continue
            fit = train_candidate(leaf_id, idx)
            if fit.degenerate:
                freeze(leaf_id, idx, "degenerate", fit.gain)
                continue
            for child_id, child_idx in install(leaf_id, idx, fit):
                queue.append((child_id, child_idx, depth + 1))
    else:
        heap = []

        def consider(leaf_id, idx, depth):
            reason = _freeze_reason(growth, data.labels[idx], depth)
            if reason:
                freeze(leaf_id, idx, reason)
                return
            fit = train_candidate(leaf_id, idx)
            if fit.degenerate:
                freeze(leaf_id, idx, "degenerate", fit.gain)
                return
            heapq.heappush(heap, (-fit.gain, leaf_id, idx, depth, fit))

        consider(0, all_idx, 0)
        while heap and (growth.max_leaves is None or tree.num_leaves < growth.max_leaves):
            _, leaf_id, idx, depth, fit = heapq.heappop(heap)
            for child_id, child_idx in install(leaf_id, idx, fit):
                consider(child_id, child_idx, depth + 1)
        while heap:
            _, leaf_id, idx, _, fit = heapq.heappop(heap)
            freeze(leaf_id, idx, "max_leaves", fit.gain)
    return tree, trace


def finetune(tree: Tree, data: SampleSet, config: TrainConfig,
             strategy: str = "em") -> list:
    """Retrain all splits and leaves of the fixed topology in place.

    Annealing restarts from config.gamma0 and optimizer states are fresh;
    the topology is never changed. Returns the per-epoch log.
    """
    return _fit(tree, data, config, strategy)


# -- axis-aligned baseline ------------------------------------------------

def best_axis_split(features: np.ndarray, labels: np.ndarray, num_classes: int):
    """Exhaustive single-axis split with maximal information gain.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values; ties keep the first candidate in axis-major order. Returns
    (axis, threshold, gain) or None when no axis has two distinct values.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    total = np.bincount(labels, minlength=num_classes).astype(np.float64)
    h_parent = entropy_nats(total)
    best = None
    for axis in range(features.shape[1]):
        order = np.argsort(features[:, axis], kind="stable")
        xs = features[order, axis]
        onehot = np.zeros((n, num_classes))
        onehot[np.arange(n), labels[order]] = 1.0
        cum = onehot.cumsum(axis=0)
        cuts = np.flatnonzero(xs[:-1] < xs[1:])
        if cuts.size == 0:
            continue
        left = cum[cuts]
        right = total - left
        nl = left.sum(axis=1)
        nr = right.sum(axis=1)
        h_left = -(xlogy(left, left).sum(axis=1) - xlogy(nl, nl)) / nl
        h_right = -(xlogy(right, right).sum(axis=1) - xlogy(nr, nr)) / nr
        gains = h_parent - (nl / n) * h_left - (nr / n) * h_right
        j = int(np.argmax(gains))
        if best is None or gains[j] > best[2]:
            threshold = 0.5 * (xs[cuts[j]] + xs[cuts[j] + 1])
            best = (axis, float(threshold), float(gains[j]))
    return best


def best_axis_stump_loglik(data: SampleSet):
    """Axis-restricted stump search scored by hard-routing log-likelihood.

    Enumerates the same candidates as best_axis_split but ranks them by the
    per-sample log-likelihood improvement of the fitted stump over a single
    leaf, computed through the tree machinery. Returns
    (axis, threshold, improvement) or None.
    """
    counts = data.class_counts()
    base = Tree.single_leaf(data.dim, data.num_classes, counts / counts.sum())
    ll0 = log_likelihood(base, data, HARD)
    best = None
    for axis in range(data.dim):
        values = np.unique(data.features[:, axis])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = 0.5 * (lo + hi)
            side = data.features[:, axis] > threshold
            stump = _axis_stump(data, axis, threshold, side)
            improvement = (log_likelihood(stump, data, HARD) - ll0) / data.n
            if best is None or improvement > best[2]:
                best = (axis, float(threshold), float(improvement))
    return best


def _axis_stump(data: SampleSet, axis: int, threshold: float, side: np.ndarray) -> Tree:
    left_counts = np.bincount(data.labels[~side], minlength=data.num_classes)
    right_counts = np.bincount(data.labels[side], minlength=data.num_classes)
    nodes = [
        Split(axis_aligned_coef(axis, threshold, data.dim), 1, 2),
        Leaf(left_counts / max(left_counts.sum(), 1)),
        Leaf(right_counts / max(right_counts.sum(), 1)),
    ]
    return Tree(nodes, 0, data.num_classes, data.dim)


def grow_axis_tree(data: SampleSet, max_depth: int, min_samples: int = 2) -> Tree:
    """Classic greedy induction with exhaustive axis-aligned splits.

    Leaves hold hard class frequencies; expansion stops at max_depth, on
    small or pure subsets, and when no split has positive gain.
    """
    counts = data.class_counts()
    tree = Tree.single_leaf(data.dim, data.num_classes, counts / counts.sum())
    queue = deque([(0, np.arange(data.n), 0)])
    while queue:
        leaf_id, idx, depth = queue.popleft()
        labels = data.labels[idx]
        if depth >= max_depth or idx.size < min_samples:
            continue
        if np.unique(labels).size < 2:
            continue
        found = best_axis_split(data.features[idx], labels, data.num_classes)
        if found is None or found[2] <= 0:
            continue
        axis, threshold, _ = found
        subset = data.subset(idx)
        side = subset.features[:, axis] > threshold
        stump = _axis_stump(subset, axis, threshold, side)
        replace_leaf_with_stump(tree, leaf_id, stump)
        left_id, right_id = len(tree.nodes) - 2, len(tree.nodes) - 1
        queue.append((left_id, idx[~side], depth + 1))
        queue.append((right_id, idx[side], depth + 1))
    return tree
