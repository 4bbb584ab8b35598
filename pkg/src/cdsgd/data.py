"""Synthetic and IDX datasets, per-agent shards and minibatch sampling."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import IDXCountMismatchError, IDXMagicError, IDXTruncatedError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "CDSGD_DATA_DIR"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("features must be a nonempty (n, d) array")
        if len(self.labels) != len(self.features):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= max(self.n_classes, 1)):
            raise ValueError("label outside the declared class range")

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, self.provenance)

    def whole(self) -> DatasetShard:
        """A single shard covering every sample in original order."""
        return DatasetShard(self, 0, np.arange(self.n))


@dataclass(frozen=True, eq=False)
class DatasetShard:
    dataset: Dataset
    owner: int
    sample_indices: np.ndarray

    @property
    def n_j(self) -> int:
        return len(self.sample_indices)

    @cached_property
    def features(self) -> np.ndarray:
        return self.dataset.features[self.sample_indices]

    @cached_property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.sample_indices]

    @cached_property
    def feature_mean(self) -> np.ndarray:
        return self.features.mean(axis=0)


@dataclass
class EpochSampler:
    """Draws minibatches by walking a fresh random permutation of the shard.

    A new permutation is drawn whenever the remaining samples cannot fill a
    batch (the tail of the epoch is dropped), so each epoch visits a disjoint
    cover of the shard.
    """

    n: int
    rng: np.random.Generator
    _perm: np.ndarray = field(default=None, repr=False)
    _cursor: int = 0

    def next_batch(self, batch_size: int) -> np.ndarray:
        if not 1 <= batch_size <= self.n:
            raise ValueError(f"batch size {batch_size} outside 1..{self.n}")
        if self._perm is None or self._cursor + batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._cursor = 0
        out = self._perm[self._cursor:self._cursor + batch_size]
        self._cursor += batch_size
        return out


def generate_blobs(n: int, d_in: int, classes: int, separation: float, seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian clusters with centres ``separation`` apart (at least)."""
    if classes < 2 or n < classes:
        raise ValueError("need n >= classes >= 2")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(classes, d_in))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    min_dist = dist[np.triu_indices(classes, 1)].min()
    centers *= separation / min_dist
    centers -= centers.mean(axis=0)
    labels = rng.permutation(np.arange(n) % classes)
    features = centers[labels] + rng.normal(size=(n, d_in))
    return Dataset(features, labels.astype(np.int64), classes, f"synthetic(blobs, seed={seed})")


def generate_noise(n: int, d: int, scale: float, seed: int) -> Dataset:
    """Zero-mean Gaussian rows used as per-sample perturbations of a quadratic."""
    rng = np.random.default_rng(seed)
    return Dataset(scale * rng.normal(size=(n, d)), np.zeros(n, dtype=np.int64), 1,
                   f"synthetic(noise, seed={seed})")


def _resolve(path) -> Path:
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get(DATA_DIR_ENV):
        p = Path(os.environ[DATA_DIR_ENV]) / p
    return p


def _read_header(buf: bytes, n_ints: int, magic: int, path) -> tuple[int, ...]:
    if len(buf) < 4 * n_ints:
        raise IDXTruncatedError(f"{path}: header truncated ({len(buf)} bytes)")
    vals = struct.unpack(f">{n_ints}I", buf[:4 * n_ints])
    if vals[0] != magic:
        raise IDXMagicError(f"{path}: magic 0x{vals[0]:08x}, expected 0x{magic:08x}")
    return vals


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read an IDX image/label pair (MNIST layout); pixels are scaled to [0, 1]."""
    images_path, labels_path = _resolve(images_path), _resolve(labels_path)
    ibuf = images_path.read_bytes()
    _, count, rows, cols = _read_header(ibuf, 4, IDX_IMAGE_MAGIC, images_path)
    need = 16 + count * rows * cols
    if len(ibuf) < need:
        raise IDXTruncatedError(f"{images_path}: expected {need} bytes, found {len(ibuf)}")
    lbuf = labels_path.read_bytes()
    _, n_labels = _read_header(lbuf, 2, IDX_LABEL_MAGIC, labels_path)
    if len(lbuf) < 8 + n_labels:
        raise IDXTruncatedError(f"{labels_path}: expected {8 + n_labels} bytes, found {len(lbuf)}")
    if n_labels != count:
        raise IDXCountMismatchError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    if limit is not None:
        features, labels = features[:limit], labels[:limit]
    n_classes = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(features, labels, n_classes, f"idx({images_path}, {labels_path})")


def partition(dataset: Dataset, n_agents: int, scheme: str = "iid", seed: int = 0) -> list[DatasetShard]:
    """Split ``dataset`` into disjoint contiguous shards, one per agent.

    ``iid`` shuffles globally first; ``label_sorted`` sorts by label (stable)
    so shards are as label-homogeneous as possible.  The remainder ``n % N``
    goes to the lowest-index agents.
    """
    n = dataset.n
    if n_agents < 1 or n_agents > n:
        raise ValueError(f"cannot split {n} samples over {n_agents} agents")
    if scheme == "iid":
        order = np.random.default_rng(seed).permutation(n)
    elif scheme == "label_sorted":
        order = np.argsort(dataset.labels, kind="stable")
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    base, extra = divmod(n, n_agents)
    sizes = [base + (1 if j < extra else 0) for j in range(n_agents)]
    bounds = np.cumsum([0] + sizes)
    return [DatasetShard(dataset, j, order[bounds[j]:bounds[j + 1]]) for j in range(n_agents)]


def train_validation_split(dataset: Dataset, holdout: float, seed: int) -> tuple[Dataset, Dataset | None]:
    if holdout <= 0:
        return dataset, None
    if not holdout < 1:
        raise ValueError("holdout fraction must be < 1")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_val = int(round(holdout * dataset.n))
    return dataset.subset(np.sort(perm[n_val:])), dataset.subset(np.sort(perm[:n_val]))


def standardize(train: Dataset, *others: Dataset | None):
    """Zero-mean, unit-variance features using statistics of ``train``."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd[sd == 0] = 1.0
    out = [Dataset((ds.features - mu) / sd, ds.labels, ds.n_classes, ds.provenance) if ds is not None else None
           for ds in (train, *others)]
    return out[0] if not others else tuple(out)
