"""Datasets: synthetic tasks, IDX (MNIST-format) reading, batching and CSV export."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, ShapeError
from .model import Batch
from .numerics import Rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
N_CLASSES = 10


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0] or self.inputs.shape[0] < 1:
            raise ShapeError("inputs and targets need the same, nonzero number of rows")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ShapeError("dataset entries must be finite")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.inputs[indices], self.targets[indices], self.name)

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.targets)

    def to_csv(self, path: str | Path) -> None:
        n_in, n_out = self.inputs.shape[1], self.targets.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(n_in)] + [f"y{j}" for j in range(n_out)])
            for x, y in zip(self.inputs, self.targets):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def toy_regression(n: int, rng: Rng, mean: float = 1.0, std: float = 0.1) -> Dataset:
    """Scalar task ``y = -x`` with ``x ~ N(mean, std^2)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.normal(size=(n, 1), loc=mean, scale=std)
    return Dataset(x, -x, "toy_regression")


def linear_teacher(n: int, n_in: int, n_out: int, rng: Rng, noise: float = 0.0) -> Dataset:
    """Gaussian inputs with targets from a random linear map plus optional noise."""
    if n < 1 or n_in < 1 or n_out < 1:
        raise ValueError("sizes must be >= 1")
    x = rng.normal(size=(n, n_in))
    teacher = rng.normal(size=(n_in, n_out)) / np.sqrt(n_in)
    y = x @ teacher
    if noise:
        y = y + noise * rng.normal(size=y.shape)
    return Dataset(x, y, "linear_teacher")


def matrix_completion_task(rng: Rng, size: int = 10, rank: int = 3, n_masked: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Low-rank target ``U V^T`` and a 0/1 mask with ``n_masked`` hidden entries."""
    target = rng.normal(size=(size, rank)) @ rng.normal(size=(size, rank)).T
    mask = np.ones(size * size)
    mask[rng.choice(size * size, n_masked, replace=False)] = 0.0
    return target, mask.reshape(size, size)


def matrix_completion_batch(target: np.ndarray, mask: np.ndarray) -> Batch:
    """Regression view: input ``e_j`` maps to column ``j`` of the target."""
    n = target.shape[1]
    return Batch(np.eye(n), target.T.copy(), mask.T.copy())


def mnist_like(n: int, rng: Rng, n_features: int = 784, n_classes: int = N_CLASSES) -> Dataset:
    """Random pixels in [0, 1] with random labels, for smoke tests."""
    x = rng.uniform(0.0, 1.0, size=(n, n_features))
    labels = rng.integers(0, n_classes, size=n)
    return Dataset(x, one_hot(labels, n_classes), "mnist_like")


def _read_header(raw: bytes, magic: int, n_dims: int, path: Path) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < 4:
        raise FormatError(f"{path.name}: file too short for magic number", 0)
    found = struct.unpack(">i", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path.name}: magic {found}, expected {magic}", 0)
    if len(raw) < header_len:
        raise FormatError(f"{path.name}: truncated header", len(raw))
    return struct.unpack(">" + "i" * n_dims, raw[4:header_len])


def _read_idx_images(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    n, rows, cols = _read_header(raw, IMAGE_MAGIC, 3, path)
    start = 16
    expected = start + n * rows * cols
    if len(raw) < expected:
        raise FormatError(f"{path.name}: truncated pixel payload (need {expected} bytes)", len(raw))
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=start)
    return pixels.reshape(n, rows * cols).astype(float) / 255.0


def _read_idx_labels(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    (n,) = _read_header(raw, LABEL_MAGIC, 1, path)
    start = 8
    if len(raw) < start + n:
        raise FormatError(f"{path.name}: truncated label payload (need {start + n} bytes)", len(raw))
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=start)
    bad = np.flatnonzero(labels >= N_CLASSES)
    if bad.size:
        raise FormatError(f"{path.name}: label {labels[bad[0]]} out of range", start + int(bad[0]))
    return labels.astype(int)


def load_mnist_idx(images_path: str | Path, labels_path: str | Path, standardise: bool = False) -> Dataset:
    """Read an IDX image/label pair into pixels in [0, 1] and one-hot labels.

    ``standardise`` additionally centres and scales the pixels by their global
    mean and standard deviation.
    """
    images = _read_idx_images(Path(images_path))
    labels = _read_idx_labels(Path(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    if standardise:
        images = (images - images.mean()) / (images.std() + 1e-12)
    return Dataset(images, one_hot(labels), "mnist")


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">ii", LABEL_MAGIC, labels.size) + labels.tobytes())


def batches(dataset: Dataset, batch_size: int = 64, rng: Rng | None = None) -> Iterator[Batch]:
    """One epoch of shuffled mini-batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(dataset.inputs[idx], dataset.targets[idx])


def batch_indices(n: int, batch_size: int, rng: Rng | None = None) -> list[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[s : s + batch_size] for s in range(0, n, batch_size)]
