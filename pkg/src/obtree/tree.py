"""Binary tree arena with oblique splits and categorical leaves.

Nodes live in a flat list and reference their children by list index, so a
tree can be grown in place and written out as a flat record list. A split
holds an oblique coefficient vector of length p+1 (the last entry is the
bias); its scalar feature for a sample x is coef[:p] @ x + coef[p]. A leaf
holds a categorical class distribution. Every routing or training routine
relies on the cached path bookkeeping computed here: for each leaf, the set
of splits crossed toward the right child and the set crossed toward the
left child on the unique root-to-leaf path.

Reads are safe to share across threads; mutation (growth, training) needs
exclusive access and invalidates the cache.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import TreeStructureError

# Tolerance for "distribution sums to one" checks.
PROB_TOL = 1e-9


@dataclass
class Split:
    coef: np.ndarray  # length p+1; last entry is the bias
    left: int
    right: int


@dataclass
class Leaf:
    probs: np.ndarray  # length K; nonnegative, sums to one


@dataclass
class SampleSet:
    """Dense feature matrix with 0-based integer class labels.

    Labels are 0-based everywhere inside the package; file formats and
    reports use the original label tokens, translated at the boundary.
    """

    features: np.ndarray  # (N, p) float64
    labels: np.ndarray    # (N,) int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-D with one entry per sample")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValueError("labels must lie in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PathSets:
    """Per-leaf path bookkeeping plus mask matrices for vectorized math.

    Leaves are ordered left to right (in-order); splits are ordered by
    ascending node id. right_mask[i, j] is True when leaf leaf_ids[i] sits
    in the right subtree of split split_ids[j], and analogously left_mask.
    """

    leaf_ids: tuple
    split_ids: tuple
    right_sets: dict
    left_sets: dict
    right_mask: np.ndarray  # (L, I) bool
    left_mask: np.ndarray   # (L, I) bool
    leaf_depth: np.ndarray  # (L,) int64
    leaf_row: dict          # node id -> row in leaf order
    split_col: dict         # node id -> column in split order


class Tree:
    """Oblique decision tree over p features and K classes."""

    def __init__(self, nodes, root: int, num_classes: int, feature_dim: int):
        self.nodes = list(nodes)
        self.root = root
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self._paths: PathSets | None = None
        self.validate()

    @classmethod
    def single_leaf(cls, feature_dim: int, num_classes: int, probs=None) -> "Tree":
        if probs is None:
            probs = np.full(num_classes, 1.0 / num_classes)
        return cls([Leaf(np.asarray(probs, dtype=np.float64))], 0, num_classes, feature_dim)

    # -- structure ---------------------------------------------------------

    @property
    def num_splits(self) -> int:
        return sum(isinstance(nd, Split) for nd in self.nodes)

    @property
    def num_leaves(self) -> int:
        return len(self.nodes) - self.num_splits

    def split_ids(self):
        return self.paths().split_ids

    def leaf_ids(self):
        return self.paths().leaf_ids

    def depth(self) -> int:
        return int(self.paths().leaf_depth.max())

    def node_depths(self) -> dict:
        """Depth of every node (root has depth 0)."""
        depths = {self.root: 0}
        stack = [self.root]
        while stack:
            i = stack.pop()
            nd = self.nodes[i]
            if isinstance(nd, Split):
                for child in (nd.left, nd.right):
                    depths[child] = depths[i] + 1
                    stack.append(child)
        return depths

    def paths(self) -> PathSets:
        if self._paths is None:
            self._paths = compute_path_sets(self)
        return self._paths

    def invalidate(self):
        self._paths = None

    def validate(self):
        """Check link integrity and parameter shapes; raise on violation."""
        n = len(self.nodes)
        if not 0 <= self.root < n:
            raise TreeStructureError("root index out of range")
        seen = np.zeros(n, dtype=bool)
        stack = [self.root]
        while stack:
            i = stack.pop()
            if seen[i]:
                raise TreeStructureError(f"node {i} reached twice")
            seen[i] = True
            nd = self.nodes[i]
            if isinstance(nd, Split):
                if nd.coef.shape != (self.feature_dim + 1,):
                    raise TreeStructureError(
                        f"split {i} coef has shape {nd.coef.shape}, "
                        f"expected ({self.feature_dim + 1},)"
                    )
                for child in (nd.left, nd.right):
                    if not 0 <= child < n:
                        raise TreeStructureError(f"split {i} links to missing node {child}")
                    stack.append(child)
            elif isinstance(nd, Leaf):
                if nd.probs.shape != (self.num_classes,):
                    raise TreeStructureError(
                        f"leaf {i} probs has shape {nd.probs.shape}, "
                        f"expected ({self.num_classes},)"
                    )
                if nd.probs.min() < -PROB_TOL or abs(nd.probs.sum() - 1.0) > PROB_TOL:
                    raise TreeStructureError(f"leaf {i} probs is not a distribution")
            else:
                raise TreeStructureError(f"node {i} has unknown type {type(nd)}")
        if not seen.all():
            orphans = np.flatnonzero(~seen).tolist()
            raise TreeStructureError(f"orphan nodes {orphans}")
        if self.num_leaves != self.num_splits + 1:
            raise TreeStructureError("leaf count must be split count plus one")

    # -- parameter views ---------------------------------------------------

    def coef_matrix(self) -> np.ndarray:
        """Split coefficients stacked as (I, p+1) in split-column order."""
        ps = self.paths()
        if not ps.split_ids:
            return np.zeros((0, self.feature_dim + 1))
        return np.stack([self.nodes[i].coef for i in ps.split_ids])

    def probs_matrix(self) -> np.ndarray:
        """Leaf distributions stacked as (L, K) in leaf-row order."""
        ps = self.paths()
        return np.stack([self.nodes[i].probs for i in ps.leaf_ids])

    def set_probs_matrix(self, probs: np.ndarray):
        ps = self.paths()
        if probs.shape != (len(ps.leaf_ids), self.num_classes):
            raise ValueError("probs matrix shape does not match the tree")
        for row, i in enumerate(ps.leaf_ids):
            self.nodes[i].probs = np.array(probs[row], dtype=np.float64)

    def copy(self) -> "Tree":
        return copy.deepcopy(self)


def oblique_feature(coef: np.ndarray, x: np.ndarray) -> float:
    """Scalar split feature coef[:p] @ x + coef[p]."""
    coef = np.asarray(coef, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if coef.shape != (x.shape[-1] + 1,):
        raise ValueError(
            f"coef has length {coef.shape[0]}, expected {x.shape[-1] + 1}"
        )
    return float(coef[:-1] @ x + coef[-1])


def axis_aligned_coef(axis: int, threshold: float, dim: int) -> np.ndarray:
    """Coefficients equivalent to the axis test x[axis] > threshold.

    The axis is 0-based. The vector has a one at the axis position and
    -threshold as bias, so the split feature is x[axis] - threshold.
    """
    if not 0 <= axis < dim:
        raise ValueError(f"axis {axis} out of range for {dim} features")
    coef = np.zeros(dim + 1)
    coef[axis] = 1.0
    coef[dim] = -float(threshold)
    return coef


def new_stump(feature_dim: int, num_classes: int, rng: np.random.Generator) -> Tree:
    """Single split with two leaves; direction drawn from the unit sphere,
    leaf distributions drawn uniformly at random and normalized."""
    coef = rng.standard_normal(feature_dim + 1)
    norm = np.linalg.norm(coef)
    while norm < 1e-12:
        coef = rng.standard_normal(feature_dim + 1)
        norm = np.linalg.norm(coef)
    coef /= norm
    leaves = []
    for _ in range(2):
        probs = rng.random(num_classes)
        probs /= probs.sum()
        leaves.append(Leaf(probs))
    nodes = [Split(coef, 1, 2), leaves[0], leaves[1]]
    return Tree(nodes, 0, num_classes, feature_dim)


def replace_leaf_with_stump(tree: Tree, leaf_id: int, stump: Tree) -> Tree:
    """Graft a trained stump in place of a leaf; returns the same tree.

    The split takes over the leaf's arena slot and the stump's two leaves
    are appended, so existing node ids stay valid. All other parameters are
    left untouched.
    """
    if not 0 <= leaf_id < len(tree.nodes) or not isinstance(tree.nodes[leaf_id], Leaf):
        raise TreeStructureError(f"node {leaf_id} is not a leaf")
    if stump.feature_dim != tree.feature_dim or stump.num_classes != tree.num_classes:
        raise TreeStructureError("stump dimensions do not match the tree")
    if stump.num_splits != 1 or len(stump.nodes) != 3:
        raise TreeStructureError("graft source must be a single split with two leaves")
    root = stump.nodes[stump.root]
    left_leaf = stump.nodes[root.left]
    right_leaf = stump.nodes[root.right]
    n = len(tree.nodes)
    tree.nodes[leaf_id] = Split(np.array(root.coef), n, n + 1)
    tree.nodes.append(Leaf(np.array(left_leaf.probs)))
    tree.nodes.append(Leaf(np.array(right_leaf.probs)))
    tree.invalidate()
    tree.validate()
    return tree


def compute_path_sets(tree: Tree) -> PathSets:
    """Walk the tree once and collect per-leaf right/left split sets."""
    split_ids = tuple(
        i for i in range(len(tree.nodes)) if isinstance(tree.nodes[i], Split)
    )
    split_col = {i: c for c, i in enumerate(split_ids)}
    leaf_ids = []
    right_sets = {}
    left_sets = {}
    # Push right child first so the left child is handled first (in-order).
    stack = [(tree.root, frozenset(), frozenset())]
    while stack:
        i, rset, lset = stack.pop()
        nd = tree.nodes[i]
        if isinstance(nd, Leaf):
            leaf_ids.append(i)
            right_sets[i] = rset
            left_sets[i] = lset
        else:
            stack.append((nd.right, rset | {i}, lset))
            stack.append((nd.left, rset, lset | {i}))
    leaf_ids = tuple(leaf_ids)
    leaf_row = {i: r for r, i in enumerate(leaf_ids)}
    nl, ns = len(leaf_ids), len(split_ids)
    right_mask = np.zeros((nl, ns), dtype=bool)
    left_mask = np.zeros((nl, ns), dtype=bool)
    depth = np.zeros(nl, dtype=np.int64)
    for r, leaf in enumerate(leaf_ids):
        for s in right_sets[leaf]:
            right_mask[r, split_col[s]] = True
        for s in left_sets[leaf]:
            left_mask[r, split_col[s]] = True
        depth[r] = len(right_sets[leaf]) + len(left_sets[leaf])
    return PathSets(
        leaf_ids=leaf_ids,
        split_ids=split_ids,
        right_sets=right_sets,
        left_sets=left_sets,
        right_mask=right_mask,
        left_mask=left_mask,
        leaf_depth=depth,
        leaf_row=leaf_row,
        split_col=split_col,
    )
