"""Built-in synthetic datasets.

xor_oblique draws four elongated Gaussian clusters centered on a line at an
oblique angle, like four beads on a tilted string. The two outer clusters
share one class and the two inner clusters the other, so a single
hyperplane can never separate the classes (best case three of four
clusters on the correct side), while two parallel oblique cuts between the
beads are nearly perfect. Each cluster is stretched perpendicular to the
string, which smears the x and y projections of neighboring clusters into
each other; axis-parallel splits therefore stay weak at depth 2. Cluster
weights are mildly asymmetric so the first trained split has one preferred
cut instead of a symmetric tie.

smooth_image_classes produces small grayscale images for two classes that
differ by smooth spatial templates under heavy pixel noise; useful for
exercising the spatial smoothness penalty.
"""
from __future__ import annotations

import numpy as np

from .tree import SampleSet

XOR_ANGLE = 0.7            # string angle in radians
XOR_SPACING = 1.0          # half distance between neighboring cluster centers
XOR_SIGMA_ALONG = 2.2      # spread perpendicular to the string (stripe length)
XOR_SIGMA_ACROSS = 1.0 / 3.0  # spread along the string (cut margin is 3 sigma)
XOR_POSITIONS = (-3.0, -1.0, 1.0, 3.0)  # centers along the string, times spacing
XOR_CLASSES = (1, 0, 0, 1)
XOR_WEIGHTS = (0.30, 0.22, 0.22, 0.26)


def xor_oblique(n: int, seed: int) -> SampleSet:
    """Two classes, four oblique Gaussian stripes; outer stripes vs inner."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    w = np.array([np.cos(XOR_ANGLE), np.sin(XOR_ANGLE)])
    w_perp = np.array([-np.sin(XOR_ANGLE), np.cos(XOR_ANGLE)])
    which = rng.choice(4, size=n, p=XOR_WEIGHTS)
    along = rng.normal(0.0, XOR_SIGMA_ALONG, size=n)
    across = rng.normal(0.0, XOR_SIGMA_ACROSS, size=n)
    positions = np.array(XOR_POSITIONS) * XOR_SPACING
    coord_w = positions[which] + across
    features = np.outer(coord_w, w) + np.outer(along, w_perp)
    labels = np.array(XOR_CLASSES, dtype=np.int64)[which]
    return SampleSet(features, labels, 2)


def smooth_image_classes(n: int, height: int, width: int, seed: int,
                         noise: float = 1.0) -> SampleSet:
    """Two classes of noisy grayscale images with smooth class templates.

    Class 0 carries a smooth bump in the upper left, class 1 in the lower
    right; iid pixel noise makes single pixels unreliable, so smooth split
    directions generalize better than rough ones.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]

    def bump(cy, cx, scale):
        return np.exp(-(((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * scale ** 2)))

    t0 = bump(height * 0.3, width * 0.3, max(height, width) * 0.25)
    t1 = bump(height * 0.7, width * 0.7, max(height, width) * 0.25)
    templates = np.stack([t0.ravel(), t1.ravel()])
    labels = rng.integers(0, 2, size=n)
    features = templates[labels] + rng.normal(0.0, noise, size=(n, height * width))
    return SampleSet(features, labels.astype(np.int64), 2)
