"""Dataset loading, normalization, and image-oriented helpers.

Labels are 0-based inside the package; loaders return the original label
tokens as a list whose position is the internal class index, and writers
translate back. Sparse text rows use 1-based feature indices, as is
conventional for that format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .inference import route_batch
from .tree import SampleSet, Tree


def _canonical_label(token: str) -> str:
    """Collapse numerically equal tokens ('+1', '1', '1.0') to one spelling."""
    try:
        value = float(token)
    except ValueError:
        return token
    if value == int(value):
        return str(int(value))
    return repr(value)


def load_libsvm(path, dim: int | None = None, label_tokens=None):
    """Parse sparse `label index:value` text into a dense SampleSet.

    Feature indices are 1-based; omitted indices are zero. Returns
    (SampleSet, label_tokens) where position k of label_tokens is the
    original token of internal class k. Pass label_tokens to reuse an
    existing label mapping (unknown labels then raise).
    """
    rows = []
    labels_raw = []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            labels_raw.append(_canonical_label(parts[0]))
            entries = {}
            for item in parts[1:]:
                try:
                    idx_str, val_str = item.split(":", 1)
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: line {lineno}: bad entry {item!r}"
                    ) from None
                if idx < 1:
                    raise DataFormatError(
                        f"{path}: line {lineno}: feature index {idx} is not positive"
                    )
                if idx in entries:
                    raise DataFormatError(
                        f"{path}: line {lineno}: duplicate feature index {idx}"
                    )
                entries[idx] = val
                max_index = max(max_index, idx)
            rows.append(entries)
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    if dim is None:
        dim = max_index
    elif max_index > dim:
        raise DataFormatError(
            f"{path}: feature index {max_index} exceeds the declared dimension {dim}"
        )
    if label_tokens is None:
        unique = sorted(set(labels_raw), key=_label_sort_key)
        label_tokens = list(unique)
    token_to_class = {tok: k for k, tok in enumerate(label_tokens)}
    try:
        labels = np.array([token_to_class[tok] for tok in labels_raw], dtype=np.int64)
    except KeyError as exc:
        raise DataFormatError(f"{path}: unknown label {exc.args[0]!r}") from None
    features = np.zeros((len(rows), dim))
    for r, entries in enumerate(rows):
        for idx, val in entries.items():
            features[r, idx - 1] = val
    return SampleSet(features, labels, len(label_tokens)), label_tokens


def _label_sort_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def save_libsvm(data: SampleSet, path, label_tokens=None):
    """Write a SampleSet as sparse text; zero features are omitted.

    Values are written with full precision, so a read-back is value exact.
    Without label_tokens, classes are written 1-based.
    """
    with open(path, "w") as fh:
        for r in range(data.n):
            if label_tokens is not None:
                token = label_tokens[data.labels[r]]
            else:
                token = str(int(data.labels[r]) + 1)
            cols = np.flatnonzero(data.features[r])
            items = " ".join(f"{c + 1}:{float(data.features[r, c])!r}" for c in cols)
            fh.write(f"{token} {items}".rstrip() + "\n")


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx(images_path, labels_path):
    """Load big-endian binary image/label pairs; pixels scaled to [0, 1].

    Returns (SampleSet, label_tokens); features are flattened row-major.
    """
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise DataFormatError(f"{images_path}: truncated header")
        magic, count, height, width = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = fh.read(count * height * width)
        if len(raw) != count * height * width:
            raise DataFormatError(f"{images_path}: truncated pixel data")
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise DataFormatError(f"{labels_path}: truncated header")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw_labels = fh.read(label_count)
        if len(raw_labels) != label_count:
            raise DataFormatError(f"{labels_path}: truncated label data")
    if label_count != count:
        raise DataFormatError(
            f"{labels_path}: {label_count} labels for {count} images"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, height * width)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    data = SampleSet(pixels.astype(np.float64) / 255.0, labels, num_classes)
    return data, [str(k) for k in range(num_classes)]


@dataclass
class NormalizationStats:
    mean: np.ndarray  # (p,)
    std: np.ndarray   # (p,) population std; zeros mark constant features

    @property
    def constant_mask(self) -> np.ndarray:
        return self.std == 0.0


def fit_normalization(data: SampleSet) -> NormalizationStats:
    """Per-feature mean and population standard deviation."""
    return NormalizationStats(
        mean=data.features.mean(axis=0),
        std=data.features.std(axis=0),
    )


def apply_normalization(data: SampleSet, stats: NormalizationStats) -> SampleSet:
    """Shift and scale to the stored statistics; constant features are only
    shifted."""
    scale = np.where(stats.std > 0, stats.std, 1.0)
    return SampleSet((data.features - stats.mean) / scale, data.labels,
                     data.num_classes)


def unapply_normalization(data: SampleSet, stats: NormalizationStats) -> SampleSet:
    scale = np.where(stats.std > 0, stats.std, 1.0)
    return SampleSet(data.features * scale + stats.mean, data.labels,
                     data.num_classes)


def split_train_val(data: SampleSet, ratio: float, seed: int):
    """Seeded shuffle, then a ratio : (1 - ratio) split into two SampleSets."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    if data.n < 2:
        raise ValueError("need at least two samples to split")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = int(round(data.n * ratio))
    n_train = min(max(n_train, 1), data.n - 1)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


_PAD_MODES = {"mirror": "reflect", "edge": "edge", "zero": "constant"}


def sliding_window_features(image: np.ndarray, window: int,
                            labels: np.ndarray | None = None,
                            border: str = "mirror") -> SampleSet:
    """One sample per pixel: the flattened window centered on that pixel.

    The window side must be odd; borders are padded (mirrored by default).
    Optional per-pixel labels become the sample labels, otherwise all
    samples get class 0.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    if border not in _PAD_MODES:
        raise ValueError(f"unknown border mode {border!r}")
    pad = window // 2
    padded = np.pad(image, pad, mode=_PAD_MODES[border])
    patches = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    features = patches.reshape(image.size, window * window).copy()
    if labels is None:
        flat_labels = np.zeros(image.size, dtype=np.int64)
        num_classes = 1
    else:
        flat_labels = np.asarray(labels, dtype=np.int64).reshape(image.size)
        num_classes = int(flat_labels.max()) + 1
    return SampleSet(features, flat_labels, num_classes)


def write_pgm(pixels: np.ndarray, path):
    """Write an 8-bit grayscale image as binary PGM."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError("pixels must be 2-D")
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by write_pgm (maxval 255, no comments)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataFormatError(f"{path}: not an 8-bit binary PGM")
    try:
        width, height = (int(tok) for tok in parts[1].split())
    except ValueError:
        raise DataFormatError(f"{path}: bad size line") from None
    if len(parts[3]) != width * height:
        raise DataFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


def coef_to_pixels(coef: np.ndarray, height: int, width: int) -> np.ndarray:
    """Map split coefficients onto the grayscale range, min to 0, max to 255.

    Accepts a vector of length h*w or h*w+1 (the trailing bias is dropped).
    A constant vector maps to mid gray.
    """
    coef = np.asarray(coef, dtype=np.float64)
    p = height * width
    if coef.shape == (p + 1,):
        coef = coef[:p]
    if coef.shape != (p,):
        raise ValueError(f"coef length {coef.shape[0]} does not fit {height}x{width}")
    lo, hi = coef.min(), coef.max()
    if hi - lo < 1e-300:
        return np.full((height, width), 128, dtype=np.uint8)
    scaled = (coef - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8).reshape(height, width)


def export_coef_image(coef: np.ndarray, height: int, width: int, path):
    """Write one split's coefficients as a PGM image (bias excluded)."""
    write_pgm(coef_to_pixels(coef, height, width), path)


def export_leaf_map(tree: Tree, features: np.ndarray, height: int, width: int, path):
    """Route one feature row per pixel and write the reached leaf as gray.

    Leaves in left-to-right order map to equidistant gray levels from black
    to white; a single-leaf tree maps to black.
    """
    if features.shape[0] != height * width:
        raise ValueError("need exactly one feature row per pixel")
    ids = route_batch(tree, features)
    leaf_row = tree.paths().leaf_row
    n_leaves = len(leaf_row)
    rows = np.array([leaf_row[i] for i in ids], dtype=np.int64)
    if n_leaves == 1:
        gray = np.zeros(features.shape[0])
    else:
        gray = rows * (255.0 / (n_leaves - 1))
    pixels = np.rint(gray).astype(np.uint8).reshape(height, width)
    write_pgm(pixels, path)
