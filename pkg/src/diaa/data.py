"""Datasets in ``[0, 1]^n`` and their IDX / CSV readers and writers."""

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DomainError, LabelError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    examples: np.ndarray  # (N, *shape), float64 in [0, 1]
    labels: np.ndarray  # (N,), int
    classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.examples = np.asarray(self.examples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.examples.ndim < 2:
            raise ShapeError("examples must be shaped (N, *feature_shape)")
        if len(self.examples) != len(self.labels):
            raise ShapeError(f"{len(self.examples)} examples but {len(self.labels)} labels")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.classes))
        if bad.size:
            i = int(bad[0])
            raise LabelError(f"row {i}: label {self.labels[i]} outside [0, {self.classes})")
        if not np.all(np.isfinite(self.examples)):
            raise DomainError("examples contain NaN or Inf")
        outside = (self.examples < 0.0) | (self.examples > 1.0)
        if outside.any():
            row, *col = np.argwhere(outside)[0]
            raise DomainError(f"row {row}, feature {tuple(int(c) for c in col)}: value outside [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.examples.shape[1:]

    @property
    def n_features(self):
        return int(np.prod(self.shape))

    def subset(self, index, name=None):
        """Rows selected by a slice, index array or boolean mask."""
        return Dataset(self.examples[index], self.labels[index], self.classes, name or self.name)

    def head(self, count):
        return self.subset(slice(0, count))

    def fraction(self, frac):
        """The first ``frac`` of the rows (at least one)."""
        if not 0.0 < frac <= 1.0:
            raise DomainError(f"fraction must be in (0, 1], got {frac}")
        return self.head(max(1, int(round(len(self) * frac))))

    def reshaped(self, shape):
        shape = tuple(shape)
        if int(np.prod(shape)) != self.n_features:
            raise ShapeError(f"cannot view {self.shape} examples as {shape}")
        return Dataset(self.examples.reshape((len(self),) + shape), self.labels, self.classes, self.name)


def _open(path, mode="rb"):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path, expected_magic):
    with _open(path) as f:
        header = f.read(4)
        if len(header) < 4:
            raise DataFormatError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">I", header)
        if magic != expected_magic:
            raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", f.read(4 * ndim))
        payload = f.read()
    count = int(np.prod(dims))
    if len(payload) != count:
        raise DataFormatError(f"{path}: expected {count} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with _open(path, "wb") as f:
        f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        f.write(array.tobytes())


def labels_path_for(images_path):
    """``foo-images-idx3-ubyte[.gz]`` -> ``foo-labels-idx1-ubyte[.gz]``."""
    name = Path(images_path).name
    if "images-idx3" not in name:
        raise DataFormatError(f"cannot infer labels file for {images_path}; pass 'images,labels'")
    return Path(images_path).with_name(name.replace("images-idx3", "labels-idx1"))


def load_idx(images_path, labels_path=None, classes=None, name=None):
    """MNIST-style image/label pair; pixels scaled by 1/255 and shaped ``(1, rows, cols)``."""
    labels_path = labels_path_for(images_path) if labels_path is None else labels_path
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    classes = int(labels.max()) + 1 if classes is None else classes
    examples = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(examples, labels, classes, name or Path(images_path).name)


def load_csv(path, classes=None, name=None):
    """Header row with a ``label`` column; every other column is a feature already in [0, 1]."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if "label" not in header:
            raise DataFormatError(f"{path}: no 'label' column")
        label_col = header.index("label")
        feature_cols = [i for i in range(len(header)) if i != label_col]
        rows, labels = [], []
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            try:
                label = float(row[label_col])
                values = [float(row[i]) for i in feature_cols]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {r}: {exc}") from None
            if label != int(label):
                raise LabelError(f"row {r}: label {row[label_col]} is not an integer")
            for col, v in zip(feature_cols, values):
                if not 0.0 <= v <= 1.0:
                    raise DomainError(f"row {r}, column {header[col]!r}: value {v} outside [0, 1]")
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    labels = np.array(labels)
    if classes is None:
        classes = int(labels.max()) + 1
    bad = np.flatnonzero((labels < 0) | (labels >= classes))
    if bad.size:
        raise LabelError(f"row {bad[0]}: label {labels[bad[0]]} outside [0, {classes})")
    return Dataset(np.array(rows), labels, classes, name or Path(path).name)


def save_csv(dataset, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.n_features)])
        for x, y in zip(dataset.examples.reshape(len(dataset), -1), dataset.labels):
            writer.writerow([int(y)] + [repr(float(v)) for v in x])


def load_dataset(path, fmt, classes=None):
    """Load ``fmt`` in {"idx", "csv"}.  For IDX, ``path`` is the images file or ``images,labels``."""
    if fmt == "idx":
        parts = str(path).split(",")
        if len(parts) == 2:
            return load_idx(parts[0], parts[1], classes=classes)
        return load_idx(path, classes=classes)
    if fmt == "csv":
        return load_csv(path, classes=classes)
    raise DataFormatError(f"unknown dataset format {fmt!r}")
