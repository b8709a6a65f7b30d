"""Datasets: synthetic Gaussian mixtures, IDX ingestion and non-IID splits."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .model import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    """Raised for malformed IDX files; ``offset`` is the byte position at fault."""

    def __init__(self, message, path=None, offset=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset(Batch):
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.labels) < 1:
            raise ValueError("dataset must contain at least one example")
        if self.features.shape[0] != len(self.labels):
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {len(self.labels)} labels"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    skew: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 2:
            raise ValueError(f"num_clients must be >= 2, got {self.num_clients}")
        if not 0.0 <= self.skew <= 1.0:
            raise ValueError(f"skew must lie in [0, 1], got {self.skew}")


def _class_means(num_classes, dim, separation, rng):
    # Orthonormal directions scaled so every pair of means is exactly
    # `separation` apart; with more classes than dimensions fall back to
    # random directions with the same expected pairwise distance.
    if num_classes <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        return separation * q.T
    return separation * rng.standard_normal((num_classes, dim)) / np.sqrt(dim)


def gen_synthetic(
    num_classes: int,
    dim: int,
    n: int,
    separation: float,
    seed: int,
    *,
    sample_seed: int | None = None,
) -> Dataset:
    """Isotropic unit-variance Gaussian clusters, one per class.

    ``seed`` fixes the class means; ``sample_seed`` (default ``seed``) fixes the
    draws, so a train and a test set from the same mixture share ``seed`` and
    differ in ``sample_seed``. Class counts differ by at most one.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if n < num_classes:
        raise ValueError(f"n ({n}) must be at least num_classes ({num_classes})")
    if separation < 0:
        raise ValueError(f"separation must be non-negative, got {separation}")
    means = _class_means(num_classes, dim, separation, np.random.default_rng(seed))
    rng = np.random.default_rng(seed if sample_seed is None else sample_seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    features = means[labels] + rng.standard_normal((n, dim))
    return Dataset(features, labels.astype(np.int64), num_classes)


def partition_indices(labels, num_classes: int, spec: PartitionSpec) -> list[np.ndarray]:
    """Split example indices across clients with label skew.

    A ``skew`` fraction of every class is sorted by label and cut into
    ``num_clients`` contiguous shards, so each client owns a run of roughly
    ``num_classes / num_clients`` labels. The remainder is shuffled and dealt
    to whichever clients are smallest, which keeps client sizes within one of
    each other whenever the shard cut allows it.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = spec.num_clients
    n = len(labels)
    if n < k:
        raise ValueError(f"cannot split {n} examples across {k} clients")
    rng = np.random.default_rng(spec.seed)

    sharded, pooled = [], []
    for c in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        cut = int(round(spec.skew * len(idx)))
        sharded.append(idx[:cut])
        pooled.append(idx[cut:])
    sharded = np.concatenate(sharded)
    pooled = rng.permutation(np.concatenate(pooled))

    parts = [list(chunk) for chunk in np.array_split(sharded, k)]
    target = n // k
    pos = 0
    # top every client up to the common target, then spread the rest
    for part in parts:
        need = max(0, target - len(part))
        part.extend(pooled[pos : pos + need])
        pos += need
    for j in range(pos, len(pooled)):
        parts[min(range(k), key=lambda c: (len(parts[c]), c))].append(pooled[j])

    # a heavily skewed cut can still leave a client empty; steal from the largest
    for part in parts:
        while not part:
            donor = max(parts, key=len)
            part.append(donor.pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def partition_noniid(data: Dataset, spec: PartitionSpec) -> list[Dataset]:
    return [
        data.subset(idx)
        for idx in partition_indices(data.labels, data.num_classes, spec)
    ]


def label_entropy(data: Dataset) -> float:
    counts = data.label_counts()
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


# --- IDX ---------------------------------------------------------------------


def _read_header(buf, path, magic, ndim):
    need = 4 + 4 * ndim
    if len(buf) < 4:
        raise IDXFormatError("file shorter than the 4-byte magic number", path, 0)
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise IDXFormatError(
            f"bad magic number 0x{found:08x}, expected 0x{magic:08x}", path, 0
        )
    if len(buf) < need:
        raise IDXFormatError("truncated header", path, len(buf))
    dims = struct.unpack(">" + "I" * ndim, buf[4:need])
    size = int(np.prod(dims))
    if len(buf) < need + size:
        raise IDXFormatError(
            f"truncated payload: expected {size} data bytes, found {len(buf) - need}",
            path,
            len(buf),
        )
    return dims, np.frombuffer(buf, dtype=np.uint8, count=size, offset=need)


def load_idx(images_path, labels_path, limit: int | None = None, num_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    with open(images_path, "rb") as fh:
        ibuf = fh.read()
    with open(labels_path, "rb") as fh:
        lbuf = fh.read()
    (count, rows, cols), pixels = _read_header(ibuf, images_path, IDX_IMAGES_MAGIC, 3)
    (lcount,), labels = _read_header(lbuf, labels_path, IDX_LABELS_MAGIC, 1)
    if count != lcount:
        raise IDXFormatError(
            f"label count {lcount} does not match image count {count}", labels_path, 4
        )
    if len(labels) and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise IDXFormatError(
            f"label {labels[bad]} outside [0, {num_classes})", labels_path, 8 + bad
        )
    if limit is not None:
        count = min(count, int(limit))
    features = pixels.reshape(-1, rows * cols)[:count].astype(np.float64) / 255.0
    return Dataset(features, labels[:count].astype(np.int64), num_classes)


def write_idx(data: Dataset, images_path, labels_path, shape=None):
    """Write ``data`` as an IDX pair; features are assumed to lie in [0, 1].

    ``shape`` is the (rows, cols) image shape; by default one row of ``dim``.
    """
    rows, cols = shape if shape is not None else (1, data.dim)
    if rows * cols != data.dim:
        raise ValueError(f"shape {rows}x{cols} does not match dim {data.dim}")
    pixels = np.clip(np.rint(data.features * 255.0), 0, 255).astype(np.uint8)
    n = len(data)
    _atomic_bytes(
        images_path,
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes(),
    )
    _atomic_bytes(
        labels_path,
        struct.pack(">II", IDX_LABELS_MAGIC, n) + data.labels.astype(np.uint8).tobytes(),
    )


def _atomic_bytes(path, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
