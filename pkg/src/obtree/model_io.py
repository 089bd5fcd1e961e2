"""Versioned plain-text model files.

A file holds a header of `key value` lines followed by one line per node:

    obtree-model 1
    feature_dim 2
    num_classes 2
    gamma 6.0
    labels 1 2
    root 0
    nodes 3
    0 split 1 2 0.3 -0.1 0.25
    1 leaf 0.9 0.1
    2 leaf 0.2 0.8

Floats are written with repr, the shortest decimal that reads back to the
identical double, so save/load/save reproduces the file byte for byte.
Optional header lines norm_mean and norm_std carry the feature statistics
the model was trained with.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import NormalizationStats
from .errors import DataFormatError
from .tree import Leaf, Split, Tree

FORMAT_NAME = "obtree-model"
FORMAT_VERSION = 1


@dataclass
class ModelMeta:
    label_tokens: list
    gamma: float | None = None
    normalization: NormalizationStats | None = None


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_model(tree: Tree, path, meta: ModelMeta | None = None):
    """Write the tree (and optional metadata) to a text file."""
    if meta is None:
        meta = ModelMeta(label_tokens=[str(k + 1) for k in range(tree.num_classes)])
    if len(meta.label_tokens) != tree.num_classes:
        raise ValueError("label token count must match num_classes")
    lines = [
        f"{FORMAT_NAME} {FORMAT_VERSION}",
        f"feature_dim {tree.feature_dim}",
        f"num_classes {tree.num_classes}",
        f"gamma {repr(float(meta.gamma)) if meta.gamma is not None else 'none'}",
        "labels " + " ".join(meta.label_tokens),
    ]
    if meta.normalization is not None:
        lines.append("norm_mean " + _floats(meta.normalization.mean))
        lines.append("norm_std " + _floats(meta.normalization.std))
    lines.append(f"root {tree.root}")
    lines.append(f"nodes {len(tree.nodes)}")
    for i, nd in enumerate(tree.nodes):
        if isinstance(nd, Split):
            lines.append(f"{i} split {nd.left} {nd.right} " + _floats(nd.coef))
        else:
            lines.append(f"{i} leaf " + _floats(nd.probs))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    """Read a model file; returns (tree, meta). Raises DataFormatError with
    the offending line number on malformed input."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(lineno, message):
        raise DataFormatError(f"{path}: line {lineno}: {message}")

    if not lines:
        raise DataFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        fail(1, f"expected '{FORMAT_NAME} <version>'")
    if head[1] != str(FORMAT_VERSION):
        fail(1, f"unsupported format version {head[1]}")

    header = {}
    lineno = 1
    for lineno, line in enumerate(lines[1:], start=2):
        key, _, rest = line.partition(" ")
        if key == "nodes":
            break
        header[key] = rest
    else:
        raise DataFormatError(f"{path}: missing 'nodes' line")

    def header_int(key):
        if key not in header:
            raise DataFormatError(f"{path}: missing header key {key!r}")
        try:
            return int(header[key])
        except ValueError:
            raise DataFormatError(f"{path}: bad integer for {key!r}") from None

    feature_dim = header_int("feature_dim")
    num_classes = header_int("num_classes")
    root = header_int("root")
    gamma = None
    if header.get("gamma", "none") != "none":
        gamma = float(header["gamma"])
    label_tokens = header.get("labels", "").split()
    if len(label_tokens) != num_classes:
        raise DataFormatError(f"{path}: label count does not match num_classes")
    normalization = None
    if "norm_mean" in header or "norm_std" in header:
        try:
            mean = np.array([float(v) for v in header["norm_mean"].split()])
            std = np.array([float(v) for v in header["norm_std"].split()])
        except (KeyError, ValueError):
            raise DataFormatError(f"{path}: bad normalization header") from None
        if mean.shape != (feature_dim,) or std.shape != (feature_dim,):
            raise DataFormatError(f"{path}: normalization length mismatch")
        normalization = NormalizationStats(mean, std)

    try:
        node_count = int(lines[lineno - 1].split()[1])
    except (IndexError, ValueError):
        fail(lineno, "bad 'nodes' line")
    records = lines[lineno:]
    if len(records) != node_count:
        raise DataFormatError(
            f"{path}: expected {node_count} node lines, found {len(records)}"
        )
    nodes = [None] * node_count
    for offset, line in enumerate(records):
        this_line = lineno + 1 + offset
        parts = line.split()
        try:
            idx = int(parts[0])
            kind = parts[1]
            if idx < 0 or idx >= node_count:
                fail(this_line, f"node id {idx} out of range")
            if nodes[idx] is not None:
                fail(this_line, f"duplicate node id {idx}")
            if kind == "split":
                left, right = int(parts[2]), int(parts[3])
                coef = np.array([float(v) for v in parts[4:]])
                if coef.shape != (feature_dim + 1,):
                    fail(this_line, "wrong coefficient count")
                nodes[idx] = Split(coef, left, right)
            elif kind == "leaf":
                probs = np.array([float(v) for v in parts[2:]])
                if probs.shape != (num_classes,):
                    fail(this_line, "wrong probability count")
                nodes[idx] = Leaf(probs)
            else:
                fail(this_line, f"unknown node kind {kind!r}")
        except DataFormatError:
            raise
        except (IndexError, ValueError):
            fail(this_line, "malformed node record")
    tree = Tree(nodes, root, num_classes, feature_dim)
    return tree, ModelMeta(label_tokens, gamma, normalization)
