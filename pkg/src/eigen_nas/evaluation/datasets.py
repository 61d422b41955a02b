"""Datasets for the built-in trainer.

Images are stored NHWC as float32. Three sources are supported: a generated
two-class set, CSV files (``label,pixel,...``) such as the bundled 8x8 digits,
and IDX files in the classic MNIST layout.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..genome import TensorShape

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.x_train.ndim != 4 or self.x_val.ndim != 4:
            raise DatasetError("images must be 4-D (N, H, W, C)")
        if self.x_train.shape[1:] != self.x_val.shape[1:]:
            raise DatasetError("train and validation images differ in shape")
        for y in (self.y_train, self.y_val):
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DatasetError("labels must lie in [0, num_classes)")

    @property
    def input_shape(self) -> TensorShape:
        _, h, w, c = self.x_train.shape
        return TensorShape.of(int(c), int(w), int(h))


def split(x: np.ndarray, y: np.ndarray, num_classes: int, val_fraction: float, seed: int, name: str) -> Dataset:
    perm = np.random.default_rng(seed).permutation(len(y))
    n_val = int(round(len(y) * val_fraction))
    val, train = perm[:n_val], perm[n_val:]
    return Dataset(x[train], y[train], x[val], y[val], num_classes, name)


def make_separable(n: int = 512, size: int = 8, channels: int = 1, seed: int = 0, val_fraction: float = 0.25) -> Dataset:
    """Two classes that differ in mean brightness, so global average pooling alone separates them."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    level = np.where(y == 1, 0.75, -0.75).astype(np.float32)
    x = level[:, None, None, None] + 0.3 * rng.standard_normal((n, size, size, channels)).astype(np.float32)
    return split(x.astype(np.float32), y.astype(np.int64), 2, val_fraction, seed, "separable")


def read_csv_images(path, size: int | None = None, channels: int = 1, scale: float = 1.0):
    """Rows of ``label,pixel...``; pixels are row-major (H, W, C)."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] < 2:
        raise DatasetError(f"{path}: need a label column and at least one pixel")
    labels = data[:, 0].astype(np.int64)
    pixels = data[:, 1:]
    if size is None:
        side = int(round((pixels.shape[1] / channels) ** 0.5))
        if side * side * channels != pixels.shape[1]:
            raise DatasetError(f"{path}: {pixels.shape[1]} pixels is not a square image")
        size = side
    images = (pixels / scale).reshape(-1, size, size, channels).astype(np.float32)
    return images, labels


def load_digits(val_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """The bundled 8x8 grayscale handwritten digits (1797 images, 16 grey levels)."""
    with resources.as_file(resources.files("eigen_nas.data") / "digits8x8.csv") as path:
        x, y = read_csv_images(path, size=8, scale=16.0)
    return split(x, y, 10, val_fraction, seed, "digits")


def load_csv(path, val_fraction: float = 0.2, seed: int = 0, channels: int = 1, scale: float = 255.0) -> Dataset:
    x, y = read_csv_images(path, channels=channels, scale=scale)
    return split(x, y, int(y.max()) + 1, val_fraction, seed, Path(path).stem)


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Big-endian header ``magic, count, rows, cols`` followed by unsigned bytes."""
    with _open(path) as f:
        header = f.read(16)
        if len(header) != 16:
            raise DatasetError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetError(f"{path}: bad magic 0x{magic:08x} for IDX images")
        body = f.read()
    if len(body) != n * rows * cols:
        raise DatasetError(f"{path}: expected {n * rows * cols} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        header = f.read(8)
        if len(header) != 8:
            raise DatasetError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DatasetError(f"{path}: bad magic 0x{magic:08x} for IDX labels")
        body = f.read()
    if len(body) != n:
        raise DatasetError(f"{path}: expected {n} label bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, val_fraction: float = 0.2, seed: int = 0) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise DatasetError("image and label counts differ")
    x = (images.astype(np.float32) / 255.0)[..., None]
    return split(x, labels, int(labels.max()) + 1, val_fraction, seed, Path(images_path).stem)


def load_dataset(options: dict) -> Dataset:
    """Build a dataset from a config mapping ``{"kind": ..., ...}``."""
    kind = options.get("kind", "digits")
    seed = int(options.get("split_seed", 0))
    val = float(options.get("val_fraction", 0.2))
    if kind == "digits":
        return load_digits(val, seed)
    if kind == "separable":
        return make_separable(int(options.get("n", 512)), int(options.get("size", 8)),
                              int(options.get("channels", 1)), seed, val)
    if kind == "csv":
        return load_csv(options["path"], val, seed, int(options.get("channels", 1)), float(options.get("scale", 255.0)))
    if kind == "idx":
        return load_idx(options["images"], options["labels"], val, seed)
    raise DatasetError(f"unknown dataset kind {kind!r}")
