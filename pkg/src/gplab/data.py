"""IDX reading/writing, MNIST discovery and batch construction."""
from __future__ import annotations

import gzip
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DomainError, ExhaustionError, FormatError, LengthMismatchError,
                     MissingDataError, UnsupportedTypeError)
from .numerics import Rng

NORMALIZATIONS = ("unit-sphere", "scale-255", "none")
DATA_DIR_ENV = "GPLAB_DATA_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def load_idx(data) -> np.ndarray:
    """Parse an IDX byte stream (unsigned-byte payload only).

    ``data`` may be bytes, a path or a binary file object; gzip input is
    recognised by its ``1f 8b`` magic.
    """
    if isinstance(data, (str, os.PathLike)):
        data = Path(data).read_bytes()
    elif not isinstance(data, (bytes, bytearray, memoryview)):
        data = data.read()
    data = bytes(data)
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise FormatError("not an IDX stream: bad magic")
    type_code, ndim = data[2], data[3]
    if type_code != 0x08:
        raise UnsupportedTypeError(f"unsupported IDX element type 0x{type_code:02x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise LengthMismatchError("IDX header truncated")
    shape = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(shape, dtype=np.int64))
    payload = data[header:]
    if len(payload) != count:
        raise LengthMismatchError(f"IDX payload has {len(payload)} bytes, header implies {count}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()


def write_idx(array, compress: bool = False) -> bytes:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise DomainError("write_idx only handles uint8 tensors")
    if arr.ndim > 255:
        raise DomainError("too many dimensions for IDX")
    buf = io.BytesIO()
    buf.write(bytes([0, 0, 0x08, arr.ndim]))
    buf.write(struct.pack(f">{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())
    raw = buf.getvalue()
    return gzip.compress(raw, mtime=0) if compress else raw


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = directory / name
        if p.exists():
            return p
    return None


@dataclass(frozen=True)
class ImageSource:
    """An in-memory labelled dataset, images flattened to rows."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int, rng: Rng) -> "ImageSource":
        if n > len(self):
            raise ExhaustionError(f"requested {n} samples from a dataset of {len(self)}")
        idx = np.sort(rng.choice(len(self), n, replace=False))
        return ImageSource(self.images[idx], self.labels[idx], self.n_classes)


def mnist_dir(directory=None) -> Path | None:
    d = directory or os.environ.get(DATA_DIR_ENV)
    return Path(d) if d else None


def load_mnist(directory=None, split: str = "train") -> ImageSource:
    d = mnist_dir(directory)
    if d is None:
        raise MissingDataError(f"no MNIST directory given and ${DATA_DIR_ENV} is unset")
    img_path = _find(d, MNIST_FILES[f"{split}_images"])
    lab_path = _find(d, MNIST_FILES[f"{split}_labels"])
    if img_path is None or lab_path is None:
        raise MissingDataError(f"MNIST {split} files not found in {d}")
    images = load_idx(img_path)
    labels = load_idx(lab_path)
    if len(images) != len(labels):
        raise LengthMismatchError("image and label counts differ")
    return ImageSource(images.reshape(len(images), -1), labels.astype(np.int64), 10)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional blobs in pixel units ([0, 255]).

    Each class has a random prototype; samples add Gaussian noise of standard
    deviation ``255 / separation`` and are clipped back into range.
    """

    n_classes: int = 10
    dim: int = 784
    separation: float = 4.0
    seed: int = 0

    def prototypes(self) -> np.ndarray:
        rng = Rng(self.seed, (0xB10B,))
        return 255.0 * rng.uniform((self.n_classes, self.dim))

    def sample(self, n: int, rng: Rng) -> ImageSource:
        if self.n_classes < 1 or self.dim < 1:
            raise DomainError("synthetic spec needs n_classes >= 1 and dim >= 1")
        labels = np.arange(n) % self.n_classes
        labels = labels[rng.permutation(n)]
        noise = rng.normal((n, self.dim)) * (255.0 / self.separation)
        images = np.clip(self.prototypes()[labels] + noise, 0.0, 255.0)
        return ImageSource(images, labels.astype(np.int64), self.n_classes)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.inputs) < 1:
            raise DomainError("batch inputs must be a non-empty B x d matrix")
        if len(self.labels) != len(self.inputs):
            raise DomainError("labels and inputs differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DomainError("label out of range")
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def normalize(x, scheme: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if scheme == "unit-sphere":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    if scheme == "scale-255":
        return x / 255.0
    if scheme == "none":
        return x.copy()
    raise DomainError(f"unknown normalization {scheme!r}; choose from {NORMALIZATIONS}")


def make_batch(source, size: int, normalization: str = "unit-sphere", rng: Rng | None = None) -> Batch:
    """Draw ``size`` rows from an :class:`ImageSource` or a :class:`SyntheticSpec`."""
    rng = rng or Rng(0)
    if normalization not in NORMALIZATIONS:
        raise DomainError(f"unknown normalization {normalization!r}")
    if size < 1:
        raise DomainError("batch size must be >= 1")
    if isinstance(source, SyntheticSpec):
        drawn = source.sample(size, rng)
        x, y, c = drawn.images, drawn.labels, drawn.n_classes
    else:
        if size > len(source):
            raise ExhaustionError(f"batch of {size} exceeds dataset of {len(source)}")
        idx = rng.choice(len(source), size, replace=False)
        x, y, c = source.images[idx], source.labels[idx], source.n_classes
    return Batch(normalize(x, normalization), np.asarray(y, dtype=np.int64).copy(), c)


def resolve_source(data: str = "synthetic", data_dir=None, subset: int | None = None,
                   rng: Rng | None = None):
    """``"synthetic"`` or ``"mnist"`` to a batch source; MNIST may be subsampled."""
    if data == "synthetic":
        return SyntheticSpec()
    if data == "mnist":
        src = load_mnist(data_dir)
        if subset:
            src = src.subset(subset, rng or Rng(0, (0x5EB,)))
        return src
    raise DomainError(f"unknown data source {data!r}")
