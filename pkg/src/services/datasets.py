"""
Dataset Service - CIFAR-10 Binary Format and Synthetic Blobs

Provides:
- Dataset: uint8 CHW images with optional labels and provenance
- load_cifar10 / save_cifar10: the public 3073-byte-record binary layout
- make_synthetic_blobs: class-colored Gaussian blobs on noise backgrounds
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from src.core.errors import DatasetError
from src.observability.logger import get_logger

logger = get_logger(__name__, component="datasets")

IMAGE_SHAPE = (3, 32, 32)
PIXELS = 3 * 32 * 32
RECORD_BYTES = 1 + PIXELS
NUM_CLASSES = 10

Split = Literal["train", "test"]
Provenance = Literal["cifar10-binary", "synthetic-blobs"]

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)

# One saturated color per class.
BLOB_PALETTE = np.array(
    [
        [1.0, 0.1, 0.1],
        [0.1, 1.0, 0.1],
        [0.1, 0.2, 1.0],
        [1.0, 1.0, 0.1],
        [1.0, 0.1, 1.0],
        [0.1, 1.0, 1.0],
        [1.0, 0.55, 0.0],
        [0.55, 0.1, 0.8],
        [1.0, 1.0, 1.0],
        [0.45, 0.55, 0.1],
    ],
    dtype=np.float32,
)


@dataclass
class Dataset:
    """
    Images as uint8 arrays shaped (N, 3, 32, 32), channel-major like the
    binary layout. Labels are present iff the provenance provides them.
    """

    images: np.ndarray
    labels: np.ndarray | None
    split: Split
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.images.dtype != np.uint8 or self.images.ndim != 4:
            raise DatasetError(
                f"images must be uint8 (N, C, H, W), got {self.images.dtype} {self.images.shape}"
            )
        if self.labels is not None and self.labels.shape != (self.images.shape[0],):
            raise DatasetError(
                f"labels shape {self.labels.shape} does not match {self.images.shape[0]} images"
            )

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def as_float(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float32."""
        return self.images.astype(np.float32) / np.float32(255.0)

    def label_array(self) -> np.ndarray:
        if self.labels is None:
            raise DatasetError(f"{self.provenance} {self.split} dataset carries no labels")
        return self.labels.astype(np.int64)

    def subset(self, indices: np.ndarray) -> Dataset:
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.images[indices], labels, self.split, self.provenance)

    def without_labels(self) -> Dataset:
        return Dataset(self.images, None, self.split, self.provenance)


def parse_cifar10_bytes(data: bytes, split: Split = "train", source: str = "<bytes>") -> Dataset:
    """
    Parse concatenated 3073-byte records: one label byte, then 1024 R,
    1024 G and 1024 B pixel bytes in row-major order.

    Raises:
        DatasetError: size not a multiple of 3073, or a label outside 0..9
    """
    if len(data) == 0 or len(data) % RECORD_BYTES:
        expected = (len(data) // RECORD_BYTES + 1) * RECORD_BYTES
        raise DatasetError(
            f"{source}: size {len(data)} bytes is not a positive multiple of {RECORD_BYTES} "
            f"(expected {expected} bytes for {len(data) // RECORD_BYTES + 1} records)"
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].copy()
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise DatasetError(
            f"{source}: record {int(bad[0])} has label byte {int(labels[bad[0]])}, valid range 0-9"
        )
    images = records[:, 1:].reshape(-1, *IMAGE_SHAPE).copy()
    return Dataset(images, labels, split, "cifar10-binary")


def load_cifar10(directory: str | Path, split: Split = "train") -> Dataset:
    """
    Load the CIFAR-10 binary batches for a split.

    Args:
        directory: Folder holding data_batch_{1..5}.bin and test_batch.bin
        split: "train" or "test"

    Raises:
        DatasetError: missing files or malformed records
    """
    root = Path(directory)
    names = TRAIN_FILES if split == "train" else TEST_FILES
    missing = [name for name in names if not (root / name).is_file()]
    if missing:
        raise DatasetError(f"missing CIFAR-10 files in {root}: {', '.join(missing)}")

    parts = [parse_cifar10_bytes((root / name).read_bytes(), split, str(root / name)) for name in names]
    images = np.concatenate([p.images for p in parts])
    labels = np.concatenate([p.label_array().astype(np.uint8) for p in parts])
    logger.info("CIFAR-10 loaded", directory=str(root), split=split, examples=len(labels))
    return Dataset(images, labels, split, "cifar10-binary")


def cifar10_bytes(dataset: Dataset) -> bytes:
    """Serialize a labeled dataset into the binary record layout."""
    if dataset.images.shape[1:] != IMAGE_SHAPE:
        raise DatasetError(f"binary layout needs images of shape {IMAGE_SHAPE}")
    labels = dataset.label_array().astype(np.uint8)
    records = np.concatenate([labels[:, None], dataset.images.reshape(len(dataset), PIXELS)], axis=1)
    return records.tobytes()


def save_cifar10(dataset: Dataset, path: str | Path) -> Path:
    """Write one binary batch file; loading it back reproduces the dataset."""
    target = Path(path)
    target.write_bytes(cifar10_bytes(dataset))
    return target


def make_synthetic_blobs(
    n: int,
    classes: int = NUM_CLASSES,
    seed: int = 0,
    split: Split = "train",
) -> Dataset:
    """
    Deterministic labeled images: a Gaussian blob in the class color at a
    random position and radius over a dim uniform-noise background.

    Raises:
        DatasetError: n < classes or classes outside 1..10
    """
    if not 1 <= classes <= len(BLOB_PALETTE):
        raise DatasetError(f"classes must be in 1..{len(BLOB_PALETTE)}, got {classes}")
    if n <= 0 or n < classes:
        raise DatasetError(f"need at least one image per class: n={n}, classes={classes}")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.uint8)
    _, height, width = IMAGE_SHAPE
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float32)

    background = rng.uniform(0.0, 0.25, size=(n, *IMAGE_SHAPE)).astype(np.float32)
    centers = rng.uniform(8.0, 24.0, size=(n, 2)).astype(np.float32)
    radii = rng.uniform(4.0, 7.0, size=n).astype(np.float32)

    dist2 = (ys[None] - centers[:, 0, None, None]) ** 2 + (xs[None] - centers[:, 1, None, None]) ** 2
    blob = np.exp(-dist2 / (2.0 * radii[:, None, None] ** 2))
    colors = BLOB_PALETTE[labels]
    images = background + blob[:, None] * colors[:, :, None, None]
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    logger.debug("Synthetic blobs generated", n=n, classes=classes, seed=seed)
    return Dataset(pixels, labels, split, "synthetic-blobs")
