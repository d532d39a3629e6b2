"""Datasets: synthetic ternary Gaussians, IDX images, CSV, and the train/validation split."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix plus integer labels.

    ``index`` holds each row's position in the dataset it was cut from, so a
    split keeps its provenance. ``bounds`` is the ``(lo, hi)`` domain box, or
    None for an unbounded domain.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    bounds: tuple[float, float] | None = None
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{x.shape[0]} feature rows but labels have shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        idx = np.arange(len(y)) if self.index is None else np.array(self.index, dtype=np.int64)
        for arr in (x, y, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.num_classes,
                              self.bounds, self.index[rows])

    def select_classes(self, classes) -> "LabeledDataset":
        """Keep only ``classes`` and relabel them 0..k-1 in the given order."""
        classes = list(classes)
        remap = {c: i for i, c in enumerate(classes)}
        rows = np.flatnonzero(np.isin(self.labels, classes))
        labels = np.array([remap[int(c)] for c in self.labels[rows]], dtype=np.int64)
        return LabeledDataset(self.features[rows], labels, len(classes), self.bounds, self.index[rows])


@dataclass(frozen=True)
class SplitSpec:
    validation_count: int
    seed: int = 0


def make_ternary_gaussian(n_per_class: int, centers, sigma: float, seed: int) -> LabeledDataset:
    """Three isotropic Gaussian blobs in the plane, ``n_per_class`` samples each."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] != 3 or centers.ndim != 2:
        raise ValueError(f"expected 3 centers, got array of shape {centers.shape}")
    if n_per_class <= 0:
        raise ValueError("n_per_class must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    for i in range(3):
        for j in range(i + 1, 3):
            if np.array_equal(centers[i], centers[j]):
                raise ValueError(f"centers {i} and {j} coincide")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3, n_per_class, centers.shape[1]))
    x = (centers[:, None, :] + sigma * noise).reshape(-1, centers.shape[1])
    y = np.repeat(np.arange(3), n_per_class)
    return LabeledDataset(x, y, 3, bounds=None)


DEFAULT_CENTERS = ((0.0, 1.0), (-0.8660254037844386, -0.5), (0.8660254037844386, -0.5))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than its magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw[head : head + count], dtype=np.uint8).reshape(dims)


def load_idx_pair(images_path, labels_path, num_classes: int | None = None) -> LabeledDataset:
    """Read an IDX image/label file pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1 if y.size else 1
    return LabeledDataset(x, y, c, bounds=(0.0, 1.0))


def write_idx_pair(ds: LabeledDataset, images_path, labels_path, image_shape=None) -> None:
    """Inverse of :func:`load_idx_pair` for datasets with values in [0, 1]."""
    if image_shape is None:
        side = int(round(np.sqrt(ds.dim)))
        image_shape = (side, side) if side * side == ds.dim else (1, ds.dim)
    rows, cols = image_shape
    if rows * cols != ds.dim:
        raise ValueError(f"image shape {image_shape} does not hold {ds.dim} features")
    pixels = np.rint(np.asarray(ds.features) * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IDX_IMAGE_MAGIC, len(ds), rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", IDX_LABEL_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    for path, blob in ((images_path, img), (labels_path, lab)):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(blob)


def save_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        for row, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def load_csv(path, num_classes: int | None = None, bounds=None) -> LabeledDataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last header column must be 'label'")
        rows = [r for r in reader if r]
    x = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 1)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    return LabeledDataset(x, y, c, bounds=bounds)


def split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Uniform random disjoint split into (train, validation)."""
    n = len(ds)
    if not 0 < spec.validation_count < n:
        raise ValueError(f"validation_count must lie in (0, {n}), got {spec.validation_count}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    valid_rows = np.sort(perm[: spec.validation_count])
    train_rows = np.sort(perm[spec.validation_count :])
    return ds.subset(train_rows), ds.subset(valid_rows)
