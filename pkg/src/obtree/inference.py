"""Soft and hard routing through an oblique tree.

Soft routing treats every split as an independent gate that sends a sample
right with probability sigmoid(gamma * f), where f is the split feature and
gamma is the steepness. The probability of reaching a leaf is the product
of the gate probabilities along its path; these products are accumulated in
log space so deep trees and large steepness values do not underflow.

Hard routing is a separate code path, selected by gamma = HARD (infinity):
a sample goes right exactly when f > 0, so f == 0 routes left. Class
predictions always use hard routing.
"""
from __future__ import annotations

import math

import numpy as np

from .tree import Leaf, SampleSet, Split, Tree

HARD = math.inf  # steepness value that selects the hard routing path


def sigmoid_steep(value: float, gamma: float) -> float:
    """Right-gate probability for a split feature at the given steepness."""
    if math.isinf(gamma):
        return 1.0 if value > 0 else 0.0
    z = gamma * value
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    # log(sigmoid(z)) = -log(1 + exp(-z)), stable for any sign of z.
    return -np.logaddexp(0.0, -z)


def _augment(features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.hstack([features, np.ones((features.shape[0], 1))])


def split_features(tree: Tree, features: np.ndarray) -> np.ndarray:
    """Split feature matrix, one column per split in split-column order."""
    coefs = tree.coef_matrix()
    return _augment(features) @ coefs.T


def log_path_probabilities(tree: Tree, features: np.ndarray, gamma: float) -> np.ndarray:
    """Log reach probability of every leaf for every sample, shape (B, L).

    Columns follow the in-order leaf layout of tree.paths(). Requires a
    finite steepness; hard routing has its own code path.
    """
    if math.isinf(gamma):
        raise ValueError("log probabilities need a finite steepness")
    ps = tree.paths()
    feats = _augment(features)
    if not ps.split_ids:
        return np.zeros((feats.shape[0], 1))
    z = gamma * (feats @ tree.coef_matrix().T)
    log_right = _log_sigmoid(z)
    log_left = _log_sigmoid(-z)
    return log_right @ ps.right_mask.T + log_left @ ps.left_mask.T


def path_probabilities_batch(tree: Tree, features: np.ndarray, gamma: float) -> np.ndarray:
    """Reach probability of every leaf for every sample, shape (B, L)."""
    if math.isinf(gamma):
        rows = route_batch(tree, features)
        leaf_row = tree.paths().leaf_row
        out = np.zeros((len(rows), len(leaf_row)))
        out[np.arange(len(rows)), [leaf_row[i] for i in rows]] = 1.0
        return out
    return np.exp(log_path_probabilities(tree, features, gamma))


def path_probabilities(tree: Tree, x: np.ndarray, gamma: float) -> np.ndarray:
    return path_probabilities_batch(tree, np.atleast_2d(x), gamma)[0]


def predict_proba_batch(tree: Tree, features: np.ndarray, gamma: float) -> np.ndarray:
    """Class distribution per sample: reach-weighted mixture of the leaves."""
    reach = path_probabilities_batch(tree, features, gamma)
    return reach @ tree.probs_matrix()


def predict_proba(tree: Tree, x: np.ndarray, gamma: float) -> np.ndarray:
    return predict_proba_batch(tree, np.atleast_2d(x), gamma)[0]


def route_deterministic(tree: Tree, x: np.ndarray) -> int:
    """Leaf node id reached by following the sign of each split feature."""
    x = np.asarray(x, dtype=np.float64)
    i = tree.root
    nd = tree.nodes[i]
    while isinstance(nd, Split):
        f = nd.coef[:-1] @ x + nd.coef[-1]
        i = nd.right if f > 0 else nd.left
        nd = tree.nodes[i]
    return i


def route_batch(tree: Tree, features: np.ndarray) -> np.ndarray:
    """Leaf node id per sample under hard routing."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    ids = np.full(feats.shape[0], tree.root, dtype=np.int64)
    active = np.array(
        [isinstance(tree.nodes[i], Split) for i in ids], dtype=bool
    )
    while active.any():
        for i in np.unique(ids[active]):
            nd = tree.nodes[i]
            rows = np.flatnonzero(active & (ids == i))
            f = feats[rows] @ nd.coef[:-1] + nd.coef[-1]
            ids[rows[f > 0]] = nd.right
            ids[rows[f <= 0]] = nd.left
        active = np.array(
            [isinstance(tree.nodes[i], Split) for i in ids], dtype=bool
        )
    return ids


def predict_classes(tree: Tree, features: np.ndarray) -> np.ndarray:
    """Hard-routing class prediction; argmax ties go to the smallest class."""
    ids = route_batch(tree, features)
    probs = tree.probs_matrix()
    leaf_row = tree.paths().leaf_row
    rows = np.array([leaf_row[i] for i in ids], dtype=np.int64)
    return np.argmax(probs[rows], axis=1)


def predict_class(tree: Tree, x: np.ndarray) -> int:
    return int(predict_classes(tree, np.atleast_2d(x))[0])


def accuracy(tree: Tree, data: SampleSet) -> float:
    """Hard-routing accuracy on a sample set."""
    if data.n == 0:
        raise ValueError("accuracy needs at least one sample")
    return float(np.mean(predict_classes(tree, data.features) == data.labels))
