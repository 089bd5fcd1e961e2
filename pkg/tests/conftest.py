"""Shared builders for hand-made and randomized trees."""
import numpy as np
import pytest

from obtree.synthetic import xor_oblique
from obtree.tree import Leaf, Split, Tree, new_stump, replace_leaf_with_stump


def make_stump(coef, left_probs, right_probs, num_classes=2):
    """Single split with explicit coefficients and leaf distributions."""
    coef = np.asarray(coef, dtype=np.float64)
    nodes = [
        Split(coef, 1, 2),
        Leaf(np.asarray(left_probs, dtype=np.float64)),
        Leaf(np.asarray(right_probs, dtype=np.float64)),
    ]
    return Tree(nodes, 0, num_classes, coef.size - 1)


def make_random_tree(rng, dim, num_classes, grafts, max_depth=None):
    """Random topology built by grafting random stumps at random leaves."""
    tree = Tree.single_leaf(dim, num_classes)
    for _ in range(grafts):
        leaves = list(tree.leaf_ids())
        if max_depth is not None:
            depths = tree.node_depths()
            leaves = [i for i in leaves if depths[i] < max_depth]
            if not leaves:
                break
        target = leaves[int(rng.integers(len(leaves)))]
        replace_leaf_with_stump(tree, target, new_stump(dim, num_classes, rng))
    return tree


def random_leaf_probs(tree, rng):
    """Assign random valid distributions to every leaf."""
    probs = rng.random((tree.num_leaves, tree.num_classes)) + 0.05
    probs /= probs.sum(axis=1, keepdims=True)
    tree.set_probs_matrix(probs)
    return tree


@pytest.fixture(scope="session")
def xor_train():
    return xor_oblique(2000, seed=11)


@pytest.fixture(scope="session")
def xor_test():
    return xor_oblique(4000, seed=99)
