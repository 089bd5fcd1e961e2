"""Alternating training: hard-count leaf updates and likelihood ascent.

Instead of responsibility-weighted leaf updates, each epoch starts by
routing every training sample deterministically and setting each leaf to
the empirical class frequencies of the samples it receives (uniform when a
leaf receives none). The split coefficients then ascend the plain data
log-likelihood; its gradient equals the responsibility-weighted reach
gradient evaluated at the current parameters, so the same gradient kernel
as the EM trainer is reused with freshly computed responsibilities per
batch.
"""
from __future__ import annotations

import math
import time
from typing import NamedTuple

import numpy as np

from .adam import adam_init, adam_step
from .errors import NumericError
from .em import EpochStats, TrainConfig, _check_compat, _resolve_laplacian, e_step, \
    log_likelihood, split_gradient
from .inference import accuracy, route_batch
from .tree import SampleSet, Tree


class LeafCounts(NamedTuple):
    counts: np.ndarray  # (L, K) int64, per-leaf class counts under hard routing
    totals: np.ndarray  # (L,) int64 row sums


def leaf_counts(tree: Tree, data: SampleSet) -> LeafCounts:
    """Hard-routing class counts per leaf, rows in leaf order."""
    ids = route_batch(tree, data.features)
    leaf_row = tree.paths().leaf_row
    rows = np.array([leaf_row[i] for i in ids], dtype=np.int64)
    counts = np.zeros((len(leaf_row), data.num_classes), dtype=np.int64)
    np.add.at(counts, (rows, data.labels), 1)
    return LeafCounts(counts, counts.sum(axis=1))


def hard_leaf_update(tree: Tree, data: SampleSet) -> np.ndarray:
    """Empirical class frequencies per leaf; uniform rows for empty leaves."""
    _check_compat(tree, data)
    counts, totals = leaf_counts(tree, data)
    probs = np.full(counts.shape, 1.0 / data.num_classes)
    filled = totals > 0
    probs[filled] = counts[filled] / totals[filled, None]
    return probs


def fit_alternating(tree: Tree, data: SampleSet, config: TrainConfig) -> list:
    """Train the tree in place; same schedule and log schema as fit_em."""
    _check_compat(tree, data)
    lap = _resolve_laplacian(tree, config)
    rng = np.random.default_rng(config.seed)
    split_ids = tree.split_ids()
    states = {
        sid: adam_init(tree.feature_dim + 1, config.alpha, config.beta1,
                       config.beta2, config.eps)
        for sid in split_ids
    }
    gamma = float(config.gamma0)
    log = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        fallbacks = 0
        tree.set_probs_matrix(hard_leaf_update(tree, data))
        if split_ids:
            perm = rng.permutation(data.n)
            for start in range(0, data.n, config.batch_size):
                bidx = perm[start:start + config.batch_size]
                feats = data.features[bidx]
                labels = data.labels[bidx]
                resp, fb = e_step(tree, feats, labels, gamma)
                fallbacks += fb
                grad = split_gradient(tree, resp, feats, gamma,
                                      config.spatial_reg, lap)
                for col, sid in enumerate(split_ids):
                    tree.nodes[sid].coef = adam_step(
                        states[sid], tree.nodes[sid].coef, -grad[col]
                    )
        ll = log_likelihood(tree, data, gamma)
        if math.isnan(ll):
            raise NumericError(f"log-likelihood became NaN in epoch {epoch}")
        log.append(EpochStats(
            epoch=epoch,
            gamma=gamma,
            log_likelihood=ll,
            train_accuracy=accuracy(tree, data),
            wall_time_ms=(time.perf_counter() - t0) * 1000.0,
            e_step_fallbacks=fallbacks,
        ))
        gamma += config.gamma_step
    return log
