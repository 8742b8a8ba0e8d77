"""MNIST ingestion: IDX parsing, normalization, stratified splits, batching."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from smartmixed.errors import DataMissingError, FormatError, LabelError, StratifyError, TruncationError
from smartmixed.tensor import Rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
NUM_CLASSES = 10
DATA_DIR_ENV = "SMARTMIXED_MNIST_DIR"

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def _maybe_gunzip(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncationError(f"corrupt gzip container: {exc}") from exc
    return raw


def _header(raw: bytes, n_ints: int, magic: int, what: str) -> tuple:
    if len(raw) < 4 * n_ints:
        raise TruncationError(f"{what} header needs {4 * n_ints} bytes, got {len(raw)}")
    fields = struct.unpack(">" + "i" * n_ints, raw[: 4 * n_ints])
    if fields[0] != magic:
        raise FormatError(f"bad magic number {fields[0]} for {what} (expected {magic})")
    if any(f < 0 for f in fields[1:]):
        raise FormatError(f"negative dimension in {what} header")
    return fields[1:]


def _payload(raw: bytes, offset: int, expected: int, what: str) -> np.ndarray:
    got = len(raw) - offset
    if got < expected:
        raise TruncationError(f"{what} payload has {got} bytes, header promises {expected}")
    if got > expected:
        raise FormatError(f"{what} payload has {got - expected} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=offset)


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Decode an IDX3 image file (raw or gzip) to a ``(count, rows, cols)`` uint8 array."""
    raw = _maybe_gunzip(bytes(raw))
    count, rows, cols = _header(raw, 4, IMAGE_MAGIC, "image file")
    data = _payload(raw, 16, count * rows * cols, "image file")
    return data.reshape(count, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Decode an IDX1 label file (raw or gzip) to a uint8 vector."""
    raw = _maybe_gunzip(bytes(raw))
    (count,) = _header(raw, 2, LABEL_MAGIC, "label file")
    labels = _payload(raw, 8, count, "label file")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise LabelError(f"label {int(labels.max())} outside [0, {NUM_CLASSES})")
    return labels


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">iiii", IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">ii", LABEL_MAGIC, labels.size) + labels.tobytes()


def normalize_flatten(images: np.ndarray) -> np.ndarray:
    """Scale bytes to [0, 1] and flatten each image row-major."""
    images = np.asarray(images)
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0


@dataclass
class Dataset:
    images: np.ndarray  # (N, 784) in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[indices], self.labels[indices], name if name is not None else self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


@dataclass
class SplitSpec:
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")


@dataclass
class DataSplits:
    train: Dataset
    val: Dataset
    test: Dataset


def resolve_data_dir(data_dir=None) -> Path:
    path = data_dir or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise DataMissingError(f"no MNIST directory given (use --data-dir or ${DATA_DIR_ENV})")
    path = Path(path)
    if not path.is_dir():
        raise DataMissingError(f"MNIST directory {path} does not exist")
    return path


def _find(data_dir: Path, names) -> Path:
    for name in names:
        for suffix in ("", ".gz"):
            p = data_dir / (name + suffix)
            if p.is_file():
                return p
    raise DataMissingError(f"none of {list(names)} found in {data_dir}")


def load_idx_pair(images_path, labels_path, name: str) -> Dataset:
    images = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{name}: {images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(normalize_flatten(images), labels, name)


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    """The official 60k training and 10k test sets."""
    d = resolve_data_dir(data_dir)
    train = load_idx_pair(_find(d, MNIST_FILES["train_images"]), _find(d, MNIST_FILES["train_labels"]), "train")
    test = load_idx_pair(_find(d, MNIST_FILES["test_images"]), _find(d, MNIST_FILES["test_labels"]), "test")
    return train, test


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split_indices(labels, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, val_idx), both sorted, partitioning ``range(len(labels))``.

    Each class contributes ``round(val_fraction * N_c)`` validation samples,
    picked by a seeded shuffle inside the class.  The per-class counts are
    then nudged by one, largest classes first, until the validation total
    equals ``round(val_fraction * N)``.  A nudge is only taken if it keeps
    the class within one sample of ``val_fraction * N_c``.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size == 0:
        raise StratifyError("cannot split an empty dataset")
    if counts.min() < 2:
        bad = classes[counts.argmin()]
        raise StratifyError(f"class {bad} has fewer than 2 samples")
    f = spec.val_fraction
    n_val = {c: min(max(_round_half_up(f * n), 1), n - 1) for c, n in zip(classes.tolist(), counts.tolist())}
    target = _round_half_up(f * labels.size)
    order = sorted(zip(classes.tolist(), counts.tolist()), key=lambda cn: (-cn[1], cn[0]))
    diff = target - sum(n_val.values())
    while diff != 0:
        step = 1 if diff > 0 else -1
        moved = False
        for c, n in order:
            if diff == 0:
                break
            proposed = n_val[c] + step
            if abs(proposed - f * n) <= 1 and 1 <= proposed <= n - 1:
                n_val[c] = proposed
                diff -= step
                moved = True
        if not moved:
            break
    rng = Rng(spec.seed).child("stratified_split")
    val_parts, train_parts = [], []
    for c in classes.tolist():
        idx = np.flatnonzero(labels == c)
        shuffled = idx[rng.child(int(c)).permutation(idx.size)]
        val_parts.append(shuffled[: n_val[c]])
        train_parts.append(shuffled[n_val[c]:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = stratified_split_indices(ds.labels, spec)
    return ds.subset(train_idx, f"{ds.name}-train"), ds.subset(val_idx, f"{ds.name}-val")


def stratified_subset(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Class-balanced subsample of exactly ``n`` rows (``n >= len(ds)`` returns ``ds``)."""
    if n >= len(ds):
        return ds
    _, keep = stratified_split_indices(ds.labels, SplitSpec(n / len(ds), seed))
    return ds.subset(keep, f"{ds.name}-sub{n}")


def prepare_mnist(data_dir=None, split_seed: int = 0, val_fraction: float = 0.10,
                  train_subset: int | None = None) -> DataSplits:
    """Load MNIST and produce the train / validation / test triple."""
    full, test = load_mnist(data_dir)
    train, val = stratified_split(full, SplitSpec(val_fraction, split_seed))
    if train_subset:
        train = stratified_subset(train, train_subset, split_seed)
    return DataSplits(train, val, test)


def batches(ds: Dataset, batch_size: int, rng: Rng):
    """Yield ``(X, y)`` minibatches over one seeded permutation; last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], ds.labels[idx]
