"""Datasets, the overlap-aware partitioner, and seeded mini-batching.

A partition hands every worker the shared overlap block O plus a private
shard, with the leftover (n-o) mod k points going one each to the
lowest-numbered workers. O is a prefix of a single seeded permutation, so
raising the overlap ratio with a fixed seed only grows O: sweeps over the
ratio compare nested overlap sets.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataConsistencyError, FormatError, ShapeError
from .model import Batch
from .rng import substream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# geometric spread of synthetic feature scales; keeps the task as
# ill-conditioned as raw image data instead of a round Gaussian ball, and
# the small absolute magnitudes starve fixed-step-size first-order methods
_FEATURE_SCALE_RANGE = (0.05, 0.5)


@dataclass
class Dataset:
    """Feature matrix (n, d), integer labels (n,), and provenance tag."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "synthetic"

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ShapeError("dataset needs (n, d) inputs and (n,) labels")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataConsistencyError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels"
            )
        if self.inputs.shape[0] < 1:
            raise ConfigError("dataset must hold at least one point")
        if self.provenance not in ("synthetic", "idx_file"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        if int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes:
            raise ConfigError("labels out of class range")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])


def make_synthetic(
    classes: int, per_class: int, dim: int, spread: float, seed: int
) -> Dataset:
    """Gaussian-blob classification data, fully deterministic in seed.

    Each class c gets a seeded center; its points are center + spread * N(0, I).
    Centers are stretched by a fixed geometric per-dimension scale profile.
    Rows are globally shuffled so any contiguous split is class-balanced in
    expectation.
    """
    if classes < 1 or per_class < 1 or dim < 1:
        raise ConfigError("classes, per_class and dim must be positive")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    scales = np.geomspace(*_FEATURE_SCALE_RANGE, dim)
    centers = substream(seed, "centers").standard_normal((classes, dim)) * scales
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    n = classes * per_class
    noise = substream(seed, "points").standard_normal((n, dim))
    inputs = centers[labels] + spread * noise
    order = substream(seed, "shuffle").permutation(n)
    return Dataset(inputs[order], labels[order], classes, "synthetic")


def _read_exact(f, count, path):
    data = f.read(count)
    if len(data) != count:
        raise OSError(f"{path}: truncated, wanted {count} bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (big-endian, MNIST layout).

    Pixels are scaled to [0, 1]; image and label counts must agree.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        raw = _read_exact(f, label_count, labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8)

    if count != label_count:
        raise DataConsistencyError(f"{count} images but {label_count} labels")
    return Dataset(images / 255.0, labels.astype(np.int64), 10, "idx_file")


@dataclass
class PartitionPlan:
    """Assignment of dataset indices to k workers with a shared overlap block."""

    overlap_ratio: float
    worker_count: int
    seed: int
    shards: tuple[np.ndarray, ...]
    overlap_indices: np.ndarray
    dataset: Dataset

    def shard_size(self, worker: int) -> int:
        return int(self.shards[worker].shape[0])


def partition(dataset: Dataset, r: float, k: int, seed: int) -> PartitionPlan:
    """Split a dataset into k shards D_j = O + S_j.

    |O| = floor(r*n); the remaining points are split into disjoint private
    sets of size floor((n-o)/k), remainder going one each to the first
    workers. O is a prefix of one seeded permutation so overlap sets nest
    across ratios at a fixed seed.
    """
    if not 0.0 <= r < 1.0:
        raise ConfigError(f"overlap ratio must lie in [0, 1), got {r}")
    if k < 1:
        raise ConfigError("worker count must be positive")
    n = dataset.size
    o = int(math.floor(r * n))
    if o + k > n:
        raise ConfigError(
            f"overlap {o} plus {k} workers exceeds {n} points; every worker needs a unique point"
        )
    perm = substream(seed, "partition").permutation(n)
    overlap = np.sort(perm[:o])
    rest = perm[o:]
    base, extra = divmod(n - o, k)
    shards = []
    off = 0
    for j in range(k):
        take = base + (1 if j < extra else 0)
        private = np.sort(rest[off : off + take])
        off += take
        shards.append(np.sort(np.concatenate([overlap, private])))
    return PartitionPlan(r, k, int(seed), tuple(shards), overlap, dataset)


def next_batch(plan: PartitionPlan, worker: int, batch_size: int, step: int) -> Batch:
    """Seeded mini-batch for one worker at a global step index.

    Each epoch is a fresh permutation of the worker's shard consumed in
    slices of batch_size; the final slice of an epoch may be shorter, so
    every shard point appears exactly once per epoch.
    """
    if not 0 <= worker < plan.worker_count:
        raise ConfigError(f"worker {worker} out of range")
    shard = plan.shards[worker]
    n_j = shard.shape[0]
    if batch_size < 1 or batch_size > n_j:
        raise ConfigError(f"batch size {batch_size} invalid for shard of {n_j}")
    steps_per_epoch = -(-n_j // batch_size)
    epoch, slot = divmod(step, steps_per_epoch)
    perm = substream(plan.seed, "batch", worker, epoch).permutation(n_j)
    picked = shard[perm[slot * batch_size : (slot + 1) * batch_size]]
    return Batch(plan.dataset.inputs[picked], plan.dataset.labels[picked])
