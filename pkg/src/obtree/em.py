"""Annealed EM-style training of a fixed tree topology.

Each epoch alternates two updates while the routing steepness gamma is held
at its current value:

* split coefficients move along the gradient of the responsibility-weighted
  log reach probability (plus an optional spatial smoothness penalty),
  stepped by Adam once per shuffled mini batch;
* leaf distributions are recomputed in closed form from the responsibilities
  of the full training set.

After the epoch, gamma grows by a fixed increment, so routing sharpens as
training proceeds and the final tree behaves like a deterministic one.

Responsibilities are posterior leaf memberships: for sample n and leaf l,
resp[n, l] is proportional to probs[l][y_n] times the reach probability of
leaf l, normalized over leaves. They are computed in log space; if a row's
normalizer underflows to zero, that row falls back to the plain reach
probabilities and a fallback counter is bumped.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.special import expit, logsumexp

from .adam import adam_init, adam_step
from .errors import NumericError
from .inference import (
    accuracy,
    log_path_probabilities,
    path_probabilities_batch,
    predict_proba_batch,
)
from .tree import SampleSet, Tree

# Leaves whose responsibility mass stays below this keep their previous
# distribution in the leaf update.
EMPTY_LEAF_MASS = 1e-12


@dataclass
class TrainConfig:
    """Hyperparameters for one training phase (stump fit or full tree)."""

    epochs: int = 20
    batch_size: int = 1000
    gamma0: float = 1.0
    gamma_step: float = 0.1
    spatial_reg: float = 0.0
    image_shape: tuple | None = None  # (height, width), needed when spatial_reg > 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    guarded: bool = False  # accept split steps only if the batch objective does not drop

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.gamma0 <= 0 or not math.isfinite(self.gamma0):
            raise ValueError("gamma0 must be positive and finite")
        if self.gamma_step < 0:
            raise ValueError("gamma_step must be nonnegative")
        if self.spatial_reg < 0:
            raise ValueError("spatial_reg must be nonnegative")
        if self.spatial_reg > 0 and self.image_shape is None:
            raise ValueError("spatial_reg needs an image_shape")


@dataclass
class EpochStats:
    epoch: int
    gamma: float
    log_likelihood: float
    train_accuracy: float
    wall_time_ms: float
    e_step_fallbacks: int = 0


def e_step(tree: Tree, features: np.ndarray, labels: np.ndarray, gamma: float):
    """Posterior leaf responsibilities, shape (B, L); returns (resp, fallbacks).

    fallbacks counts the rows whose normalizer underflowed and which were
    replaced by the plain reach probabilities.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if math.isinf(gamma):
        reach = path_probabilities_batch(tree, features, gamma)
        probs = tree.probs_matrix()
        picked = reach.argmax(axis=1)
        fallback = probs[picked, labels] <= 0.0
        return reach, int(fallback.sum())
    log_reach = log_path_probabilities(tree, features, gamma)
    with np.errstate(divide="ignore"):
        log_probs = np.log(tree.probs_matrix())  # (L, K), -inf at zeros
    log_num = log_reach + log_probs[:, labels].T
    norm = logsumexp(log_num, axis=1)
    under = ~np.isfinite(norm)
    with np.errstate(invalid="ignore"):
        resp = np.exp(log_num - norm[:, None])
    if under.any():
        resp[under] = np.exp(log_reach[under])
    return resp, int(under.sum())


def m_step_leaves(resp: np.ndarray, labels: np.ndarray, num_classes: int,
                  prev_probs: np.ndarray) -> np.ndarray:
    """Closed-form leaf update from full-data responsibilities.

    Leaf l gets probs[k] = sum of resp over samples of class k divided by
    the leaf's total responsibility mass. Leaves with mass below
    EMPTY_LEAF_MASS keep their previous distribution.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if resp.shape[0] != labels.shape[0]:
        raise ValueError("resp and labels disagree on the sample count")
    if prev_probs.shape != (resp.shape[1], num_classes):
        raise ValueError("prev_probs shape does not match")
    mass = resp.sum(axis=0)
    counts = np.zeros((resp.shape[1], num_classes))
    for k in range(num_classes):
        counts[:, k] = resp[labels == k].sum(axis=0)
    out = np.array(prev_probs, dtype=np.float64)
    live = mass >= EMPTY_LEAF_MASS
    out[live] = counts[live] / mass[live, None]
    return out


def laplacian_matrix(height: int, width: int) -> scipy.sparse.csr_array:
    """Graph Laplacian of the 4-connected pixel grid, shape (h*w, h*w).

    Diagonal entries count neighbors, off-diagonal entries are -1 for
    adjacent pixels; every row sums to zero and the matrix is positive
    semidefinite.
    """
    if height < 1 or width < 1:
        raise ValueError("grid sides must be positive")
    p = height * width
    idx = np.arange(p).reshape(height, width)
    pairs = []
    if width > 1:
        pairs.append(np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1))
    if height > 1:
        pairs.append(np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1))
    if not pairs:
        return scipy.sparse.csr_array((p, p))
    edges = np.vstack(pairs)
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = scipy.sparse.coo_array((np.ones(i.size), (i, j)), shape=(p, p))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    lap = scipy.sparse.diags_array(deg) - adj
    return lap.tocsr()


def _roughness(tree: Tree, laplacian) -> float:
    """Sum over splits of coef[:p] @ laplacian @ coef[:p] (bias excluded)."""
    total = 0.0
    for sid in tree.split_ids():
        c = tree.nodes[sid].coef[:-1]
        total += float(c @ (laplacian @ c))
    return total


def split_objective(tree: Tree, resp: np.ndarray, features: np.ndarray,
                    gamma: float, spatial_reg: float = 0.0,
                    laplacian=None) -> float:
    """Responsibility-weighted log reach probability, minus the penalty.

    This is the quantity the split update maximizes for a fixed set of
    responsibilities. Terms with zero responsibility contribute zero even
    when the log reach probability is -inf.
    """
    log_reach = log_path_probabilities(tree, features, gamma)
    with np.errstate(invalid="ignore"):
        terms = np.where(resp > 0, resp * log_reach, 0.0)
    value = float(terms.sum())
    if spatial_reg > 0:
        value -= spatial_reg * _roughness(tree, laplacian)
    return value


def split_gradient(tree: Tree, resp: np.ndarray, features: np.ndarray,
                   gamma: float, spatial_reg: float = 0.0,
                   laplacian=None) -> np.ndarray:
    """Gradient of split_objective in the split coefficients, shape (I, p+1).

    For split i the data term is
        gamma * sum_n (A[n,i] * (1 - s[n,i]) - B[n,i] * s[n,i]) * (x_n, 1)
    where A (B) is the responsibility mass of leaves in the right (left)
    subtree of i and s is the right-gate probability, so one pass over the
    mask matrices covers all splits at once.
    """
    if math.isinf(gamma):
        raise ValueError("split gradients need a finite steepness")
    ps = tree.paths()
    if not ps.split_ids:
        return np.zeros((0, tree.feature_dim + 1))
    feats = np.hstack([features, np.ones((features.shape[0], 1))])
    z = gamma * (feats @ tree.coef_matrix().T)
    s = expit(z)
    mass_right = resp @ ps.right_mask
    mass_left = resp @ ps.left_mask
    weight = mass_right * (1.0 - s) - mass_left * s
    grad = gamma * (weight.T @ feats)
    if spatial_reg > 0:
        coefs = tree.coef_matrix()
        grad[:, :-1] -= 2.0 * spatial_reg * (laplacian @ coefs[:, :-1].T).T
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad).all(axis=1))[0])
        raise NumericError(f"non-finite gradient for split {ps.split_ids[bad]}")
    return grad


def log_likelihood(tree: Tree, data: SampleSet, gamma: float) -> float:
    """Sum over samples of log p(y | x) under soft (or hard) routing.

    Returns -inf if any sample has zero probability; a warning names the
    first offending sample index.
    """
    proba = predict_proba_batch(tree, data.features, gamma)
    picked = proba[np.arange(data.n), data.labels]
    if np.any(picked <= 0.0):
        bad = int(np.flatnonzero(picked <= 0.0)[0])
        warnings.warn(f"sample {bad} has zero predicted probability")
        return -math.inf
    return math.fsum(np.log(picked))


def _check_compat(tree: Tree, data: SampleSet):
    if data.dim != tree.feature_dim:
        raise ValueError(
            f"data has {data.dim} features but the tree expects {tree.feature_dim}"
        )
    if data.num_classes != tree.num_classes:
        raise ValueError(
            f"data has {data.num_classes} classes but the tree expects {tree.num_classes}"
        )
    if data.n == 0:
        raise ValueError("training needs at least one sample")


def _resolve_laplacian(tree: Tree, config: TrainConfig):
    if config.spatial_reg <= 0:
        return None
    h, w = config.image_shape
    if h * w != tree.feature_dim:
        raise ValueError(
            f"image_shape {config.image_shape} does not cover {tree.feature_dim} features"
        )
    return laplacian_matrix(h, w)


def _guarded_update(tree, resp, feats, gamma, config, lap, grad, states):
    """Apply the Adam step only if the batch objective does not decrease.

    On failure the step is halved, up to 10 times, then skipped. Moment
    estimates are always advanced with the observed gradient.
    """
    ps = tree.paths()
    old = {sid: tree.nodes[sid].coef for sid in ps.split_ids}
    q0 = split_objective(tree, resp, feats, gamma, config.spatial_reg, lap)
    delta = {}
    for col, sid in enumerate(ps.split_ids):
        proposed = adam_step(states[sid], old[sid], -grad[col])
        delta[sid] = proposed - old[sid]
    for attempt in range(11):
        scale = 0.5 ** attempt
        for sid in ps.split_ids:
            tree.nodes[sid].coef = old[sid] + scale * delta[sid]
        q = split_objective(tree, resp, feats, gamma, config.spatial_reg, lap)
        if q >= q0:
            return
    for sid in ps.split_ids:
        tree.nodes[sid].coef = old[sid]


def fit_em(tree: Tree, data: SampleSet, config: TrainConfig) -> list:
    """Train the tree in place for config.epochs epochs; returns the log.

    Every epoch runs one Adam step per shuffled batch on the split
    coefficients, then recomputes the leaf distributions from full-data
    responsibilities, then increments gamma. Fresh Adam states are created
    here, so repeated calls do not share optimizer memory.
    """
    _check_compat(tree, data)
    if config.guarded and config.batch_size < data.n:
        raise ValueError("guarded updates need full batches (batch_size >= N)")
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
                if config.guarded:
                    _guarded_update(tree, resp, feats, gamma, config, lap,
                                    grad, states)
                else:
                    for col, sid in enumerate(split_ids):
                        tree.nodes[sid].coef = adam_step(
                            states[sid], tree.nodes[sid].coef, -grad[col]
                        )
        resp, fb = e_step(tree, data.features, data.labels, gamma)
        fallbacks += fb
        tree.set_probs_matrix(
            m_step_leaves(resp, data.labels, data.num_classes, tree.probs_matrix())
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
