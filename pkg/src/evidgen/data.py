"""Dataset ingestion and synthesis: 2D toy clusters, IDX image files,
class-split protocols, and evaluation grids."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "make_toy",
    "load_idx",
    "load_cifar_binary",
    "apply_split",
    "make_grid",
    "TOY_MEANS",
    "TOY_SIGMA",
    "TOY_BOUNDS",
]

# Fixed toy generator: two isotropic Gaussian clusters.
TOY_MEANS = ((-1.5, 0.0), (1.5, 0.0))
TOY_SIGMA = 0.5
TOY_BOUNDS = (-6.0, 6.0)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Inputs with integer labels, input-domain bounds, and a split tag."""

    inputs: np.ndarray
    labels: np.ndarray
    bounds: tuple = (0.0, 1.0)
    split: str = "train"

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"inputs ({len(self.inputs)}) and labels ({len(self.labels)}) disagree"
            )
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return len(self.inputs)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, indices, split=None):
        return Dataset(self.inputs[indices], self.labels[indices], self.bounds,
                       split or self.split)


def make_toy(n_per_class, seed, split="train"):
    """Two Gaussian clusters at (-1.5, 0) and (1.5, 0), sigma 0.5, in [-6, 6]^2."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, mean in enumerate(TOY_MEANS):
        pts = rng.normal(loc=mean, scale=TOY_SIGMA, size=(n_per_class, 2))
        xs.append(pts)
        ys.append(np.full(n_per_class, label))
    inputs = np.clip(np.concatenate(xs), *TOY_BOUNDS).astype(np.float64)
    return Dataset(inputs, np.concatenate(ys), bounds=TOY_BOUNDS, split=split)


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(
            f"{path}: truncated while reading {what} at offset {f.tell() - len(buf)}"
        )
    return buf


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, dtype=np.float32):
    """Load an IDX image/label file pair; pixels are scaled to [0, 1].

    Big-endian headers: images magic 0x00000803 with (count, rows, cols),
    labels magic 0x00000801 with (count).  Gzipped files are detected and
    decompressed transparently.
    """
    with _open_maybe_gzip(images_path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, images_path, "image magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(
                f"{images_path}: expected image magic 0x{IDX_IMAGE_MAGIC:08x} at offset 0, "
                f"got 0x{magic:08x}"
            )
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, images_path, "image header"))
        raw = _read_exact(f, count * rows * cols, images_path, "pixel data")
        if f.read(1):
            raise ValueError(f"{images_path}: trailing bytes after {count} images")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols, 1)

    with _open_maybe_gzip(labels_path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, labels_path, "label magic"))
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(
                f"{labels_path}: expected label magic 0x{IDX_LABEL_MAGIC:08x} at offset 0, "
                f"got 0x{magic:08x}"
            )
        (label_count,) = struct.unpack(">I", _read_exact(f, 4, labels_path, "label header"))
        labels = np.frombuffer(_read_exact(f, label_count, labels_path, "labels"), dtype=np.uint8)

    if label_count != count:
        raise ValueError(
            f"count mismatch: {images_path} has {count} images, {labels_path} has {label_count} labels"
        )
    return Dataset(images.astype(dtype) / 255.0, labels.astype(np.int64), bounds=(0.0, 1.0))


def load_cifar_binary(paths, dtype=np.float32):
    """Read CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    if isinstance(paths, (str, bytes)):
        paths = [paths]
    record = 1 + 3072
    images, labels = [], []
    for path in paths:
        with _open_maybe_gzip(path) as f:
            raw = f.read()
        if len(raw) % record:
            raise ValueError(f"{path}: size {len(raw)} is not a multiple of {record}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(arr[:, 0])
        images.append(arr[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    inputs = np.concatenate(images).astype(dtype) / 255.0
    return Dataset(inputs, np.concatenate(labels).astype(np.int64), bounds=(0.0, 1.0))


def apply_split(dataset, in_classes, out_classes):
    """Partition by class sets; in-distribution labels are remapped densely.

    Returns (in_dist, out_dist).  The out-of-distribution part keeps its
    original labels (they are never trained on).
    """
    in_set, out_set = set(in_classes), set(out_classes)
    if in_set & out_set:
        raise ValueError(f"class sets overlap: {sorted(in_set & out_set)}")
    present = set(np.unique(dataset.labels).tolist())
    missing = (in_set | out_set) - present
    if missing:
        raise ValueError(f"classes {sorted(missing)} not present in dataset")

    remap = {c: i for i, c in enumerate(sorted(in_set))}
    in_mask = np.isin(dataset.labels, sorted(in_set))
    out_mask = np.isin(dataset.labels, sorted(out_set))
    in_labels = np.array([remap[c] for c in dataset.labels[in_mask]], dtype=np.int64)
    in_dist = Dataset(dataset.inputs[in_mask], in_labels, dataset.bounds, dataset.split)
    out_dist = Dataset(dataset.inputs[out_mask], dataset.labels[out_mask],
                       dataset.bounds, dataset.split)
    return in_dist, out_dist


def make_grid(bounds, resolution):
    """Row-major lattice of resolution^2 points covering 2D `bounds`.

    `bounds` is (lo, hi) applied to both axes or ((xlo, xhi), (ylo, yhi)).
    Point i*resolution + j is (xs[i], ys[j]); spacing is (hi-lo)/(resolution-1).
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2 per axis")
    if np.isscalar(bounds[0]):
        (xlo, xhi), (ylo, yhi) = bounds, bounds
    else:
        (xlo, xhi), (ylo, yhi) = bounds
    xs = np.linspace(xlo, xhi, resolution)
    ys = np.linspace(ylo, yhi, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)
