"""Datasets: a synthetic generator, the CIFAR-10 binary reader and the NFT1 archive.

NFT1 layout (little-endian): the 4-byte magic ``b"NFT1"``, a u32 rank, ``rank``
u32 extents, then the float32 payload in C order.  Labels live in a sibling
file ``<archive>.labels`` holding raw u32 values.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FormatError

NFT_MAGIC = b"NFT1"
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class Dataset:
    """Features [N, C, D, D] with integer labels and a disjoint train/eval split."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    eval_idx: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.features.ndim != 4:
            raise ValueError(f"features must be [N, C, D, D], got shape {self.features.shape}")
        if len(self.labels) != len(self.features):
            raise ValueError(f"{len(self.labels)} labels for {len(self.features)} examples")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if np.intersect1d(self.train_idx, self.eval_idx).size:
            raise ValueError("train and eval splits overlap")
        for arr in (self.features, self.labels, self.train_idx, self.eval_idx):
            arr.setflags(write=False)

    @property
    def n_examples(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.features.shape[1:])

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "eval": self.eval_idx}[which]
        return self.features[idx], self.labels[idx]


def split_indices(n: int, rng: np.random.Generator, train_fraction: float = 0.8):
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def standardize(features: np.ndarray, train_idx: np.ndarray) -> np.ndarray:
    """Per-channel zero mean / unit variance using training-split statistics."""
    train = features[train_idx].astype(np.float64)
    mean = train.mean(axis=(0, 2, 3), keepdims=True)
    std = np.sqrt(train.var(axis=(0, 2, 3), keepdims=True))
    std[std == 0] = 1.0
    return ((features - mean) / std).astype(np.float32)


def synth_dataset(num_classes: int, n_examples: int, dim: int, channels: int,
                  difficulty: float, seed: int, name: str = "synthetic") -> Dataset:
    """Class templates plus Gaussian texture.

    Each class owns a smooth random template; an example is its class
    template plus white noise of standard deviation ``difficulty``.  At
    difficulty 0 the classes are exact, disjoint templates.
    """
    if min(num_classes, n_examples, dim, channels) < 1 or difficulty < 0:
        raise ValueError("synth_dataset parameters must be positive")
    rng = np.random.default_rng(seed)
    coarse = rng.standard_normal((num_classes, channels, 4, 4))
    reps = -(-dim // 4)
    templates = np.kron(coarse, np.ones((reps, reps)))[:, :, :dim, :dim]
    labels = np.arange(n_examples) % num_classes
    labels = labels[rng.permutation(n_examples)]
    noise = rng.standard_normal((n_examples, channels, dim, dim))
    features = (templates[labels] + difficulty * noise).astype(np.float32)
    train_idx, eval_idx = split_indices(n_examples, rng)
    return Dataset(standardize(features, train_idx), labels.astype(np.int64),
                   train_idx, eval_idx, num_classes, name)


# --------------------------------------------------------------------------
# CIFAR-10 binary


def _read_cifar(path: str) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: {raw.size} bytes is not a positive multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label {labels.max()} outside 0-9")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return pixels, labels


def load_cifar10_binary(path: str, eval_path: Optional[str] = None,
                        split_seed: Optional[int] = None) -> Dataset:
    """Read 3073-byte records (label byte, then R, G, B planes of 32x32).

    Records in ``path`` form the training split and those in ``eval_path``
    (if given) the eval split.  Without ``eval_path``, ``split_seed`` requests
    a seeded 80-20 split of ``path``; otherwise every record is training data.
    Pixels are scaled to [0, 1] and standardized per channel with training
    statistics.
    """
    x_train, y_train = _read_cifar(path)
    if eval_path is not None:
        x_eval, y_eval = _read_cifar(eval_path)
        features = np.concatenate([x_train, x_eval])
        labels = np.concatenate([y_train, y_eval])
        train_idx = np.arange(len(x_train))
        eval_idx = np.arange(len(x_train), len(features))
    else:
        features, labels = x_train, y_train
        if split_seed is None:
            train_idx, eval_idx = np.arange(len(labels)), np.arange(0)
        else:
            train_idx, eval_idx = split_indices(len(labels), np.random.default_rng(split_seed))
    return Dataset(standardize(features, train_idx), labels, train_idx, eval_idx, 10,
                   os.path.basename(path))


# --------------------------------------------------------------------------
# NFT1 archive


def write_nft(path: str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(NFT_MAGIC)
        f.write(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        f.write(array.tobytes())


def read_nft(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != NFT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header = 8 + 4 * rank
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - header != 4 * count:
        raise FormatError(f"{path}: payload holds {len(blob) - header} bytes, shape {shape} needs {4 * count}")
    return np.frombuffer(blob, dtype="<f4", offset=header).reshape(shape).astype(np.float32)


def write_labels(path: str, labels: np.ndarray) -> None:
    np.ascontiguousarray(labels, dtype="<u4").tofile(path)


def read_labels(path: str) -> np.ndarray:
    size = os.path.getsize(path)
    if size % 4:
        raise FormatError(f"{path}: {size} bytes is not a whole number of u32 labels")
    return np.fromfile(path, dtype="<u4").astype(np.int64)


def save_dataset(path: str, dataset: Dataset) -> None:
    """Write features as NFT1 plus ``.labels``; the split is not stored."""
    write_nft(path, dataset.features)
    write_labels(path + ".labels", dataset.labels)


def load_nft_dataset(path: str, num_classes: Optional[int] = None, seed: int = 0,
                     name: Optional[str] = None) -> Dataset:
    """Dataset from an NFT1 archive and its labels with a seeded 80-20 split.

    Greyscale inputs are rescaled to [0, 1]; multi-channel inputs are
    standardized per channel.
    """
    features = read_nft(path)
    if features.ndim != 4:
        raise FormatError(f"{path}: expected a rank-4 archive, got shape {features.shape}")
    labels = read_labels(path + ".labels")
    if len(labels) != len(features):
        raise FormatError(f"{path}: {len(labels)} labels for {len(features)} examples")
    n_cls = num_classes if num_classes is not None else int(labels.max()) + 1
    train_idx, eval_idx = split_indices(len(labels), np.random.default_rng(seed))
    if features.shape[1] == 1:
        lo, hi = features[train_idx].min(), features[train_idx].max()
        features = ((features - lo) / (hi - lo if hi > lo else 1.0)).astype(np.float32)
    else:
        features = standardize(features, train_idx)
    return Dataset(features, labels, train_idx, eval_idx, n_cls, name or os.path.basename(path))


def load_dataset(path: str, seed: int = 0) -> Dataset:
    """Dispatch on the file: NFT1 archives by magic, otherwise CIFAR-10 binary."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == NFT_MAGIC:
        return load_nft_dataset(path, seed=seed)
    return load_cifar10_binary(path, split_seed=seed)
