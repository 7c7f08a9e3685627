"""Bit-exact on-disk container of labeled feature vectors.

Layout (all integers little-endian)::

    magic   4 bytes  "SFV1"
    version u32      currently 1
    dim     u32      vector length
    count   u32      number of rows
    desclen u32      descriptor byte length
    desc    bytes    UTF-8 stream descriptor
    rows    count ×  (label u32, dim × f32)

Features are persisted at 32-bit precision and upcast to 64-bit on read;
identical inputs always produce byte-identical files.
"""

import struct
from pathlib import Path

import numpy as np

from .classifier import LabeledDataset
from .errors import StoreError

MAGIC = b"SFV1"
VERSION = 1

_HEAD = struct.Struct("<4sIII")
_DESCLEN = struct.Struct("<I")
_LABEL = struct.Struct("<I")


class FeatureStore:
    """Single-writer append handle for one store file.

    Use as a context manager; the header's row count is patched on close,
    so an unclosed store reads back as truncated.
    """

    def __init__(self, path, dim: int, descriptor: str = ""):
        if dim <= 0:
            raise StoreError("store dim must be positive")
        self.path = Path(path)
        self.dim = int(dim)
        self.descriptor = descriptor
        self.count = 0
        desc = descriptor.encode("utf-8")
        self._fh = open(self.path, "wb")
        self._fh.write(_HEAD.pack(MAGIC, VERSION, self.dim, 0))
        self._fh.write(_DESCLEN.pack(len(desc)))
        self._fh.write(desc)

    def append(self, label: int, values) -> None:
        if self._fh is None:
            raise StoreError("store is closed")
        values = np.asarray(getattr(values, "values", values), dtype=np.float64)
        if values.ndim != 1 or values.size != self.dim:
            raise StoreError(
                f"appending a vector of dim {values.size} to a store of "
                f"dim {self.dim}"
            )
        if not np.isfinite(values).all():
            raise StoreError("feature vector contains non-finite values")
        if label < 0 or label > 0xFFFFFFFF:
            raise StoreError(f"label {label} does not fit in u32")
        self._fh.write(_LABEL.pack(label))
        self._fh.write(values.astype("<f4").tobytes())
        self.count += 1

    def close(self) -> None:
        if self._fh is None:
            return
        self._fh.seek(_HEAD.size - 4)
        self._fh.write(struct.pack("<I", self.count))
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class StoreContents:
    """Everything read back from one store file."""

    def __init__(self, descriptor, dim, labels, features):
        self.descriptor = descriptor
        self.dim = dim
        self.labels = labels
        self.features = features

    @property
    def count(self) -> int:
        return self.labels.size

    def to_dataset(self, class_count: int | None = None) -> LabeledDataset:
        if class_count is None:
            class_count = int(self.labels.max()) + 1 if self.count else 0
        return LabeledDataset(self.features, self.labels, class_count)


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StoreError(f"{path}: truncated while reading {what}")
    return data


def read_store(path) -> StoreContents:
    """Read a whole store; validates magic, version, and row count."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic, version, dim, count = _HEAD.unpack(
            _read_exact(fh, _HEAD.size, path, "header")
        )
        if magic != MAGIC:
            raise StoreError(f"{path}: not a feature store (bad magic)")
        if version != VERSION:
            raise StoreError(f"{path}: unsupported store version {version}")
        if dim == 0:
            raise StoreError(f"{path}: header declares dim 0")
        (desclen,) = _DESCLEN.unpack(
            _read_exact(fh, _DESCLEN.size, path, "descriptor length")
        )
        descriptor = _read_exact(fh, desclen, path, "descriptor").decode("utf-8")

        row_bytes = _LABEL.size + 4 * dim
        body = fh.read()
        if len(body) < count * row_bytes:
            raise StoreError(
                f"{path}: truncated: header declares {count} rows "
                f"({count * row_bytes} bytes), file has {len(body)}"
            )
        if len(body) > count * row_bytes:
            raise StoreError(
                f"{path}: {len(body) - count * row_bytes} trailing bytes "
                f"after {count} rows"
            )

    raw = np.frombuffer(body, dtype=np.uint8).reshape(count, row_bytes)
    labels = raw[:, :4].copy().view("<u4").ravel().astype(np.int64)
    features = (
        raw[:, 4:].copy().view("<f4").reshape(count, dim).astype(np.float64)
    )
    if not np.isfinite(features).all():
        raise StoreError(f"{path}: store contains non-finite features")
    return StoreContents(descriptor, int(dim), labels, features)


def store_write(pairs, path, descriptor: str = "") -> Path:
    """Write (label, vector) pairs to a new store file.

    Vectors may be plain arrays or pipeline objects with a ``values``
    attribute; all must share one dim.
    """
    pairs = list(pairs)
    if not pairs:
        raise StoreError("refusing to write an empty store")
    first = np.asarray(getattr(pairs[0][1], "values", pairs[0][1]))
    with FeatureStore(path, first.size, descriptor) as store:
        for label, vector in pairs:
            store.append(label, vector)
    return Path(path)


def store_read(path, class_count: int | None = None) -> LabeledDataset:
    """Read a store straight into a training-ready dataset."""
    return read_store(path).to_dataset(class_count)
