"""Readers and writers for the dimension-prefixed binary vector formats
used by the standard ANN benchmark corpora.

Every record is a little-endian int32 dimension d followed by d components:
float32 for .fvecs, uint8 (widened to float32 on ingest) for .bvecs, and
int32 for .ivecs (ground-truth neighbor ids). All records in one file must
share d. Float data is served as a strided view into a memory map so large
datasets are never copied into memory wholesale.
"""

from __future__ import annotations

import os

import numpy as np

from .core import Backing, VectorSet
from .errors import FormatError, UsageError

__all__ = ["ingest", "read_ivecs", "write_fvecs", "write_ivecs"]

_FORMATS = ("fvecs", "bvecs", "ivecs")


def _detect_format(path) -> str:
    suffix = os.path.splitext(str(path))[1].lstrip(".").lower()
    if suffix not in _FORMATS:
        raise UsageError(
            f"cannot infer format from {path!r}; pass format= one of {_FORMATS}"
        )
    return suffix


def _first_dim(path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) < 4:
        raise FormatError(f"{path}: too short for a record header")
    dim = int(np.frombuffer(head, dtype="<i4")[0])
    if dim < 1:
        raise FormatError(f"{path}: nonpositive dimension prefix {dim}")
    return dim


def _check_prefixes(prefixes: np.ndarray, dim: int, path) -> None:
    if prefixes.size and not np.all(prefixes == dim):
        bad = int(prefixes[prefixes != dim][0])
        raise FormatError(f"{path}: inconsistent dimension prefix {bad} (expected {dim})")


def ingest(path, format: str | None = None) -> VectorSet:
    """Parse a Texmex-format file into a VectorSet.

    fvecs data stays file-mapped (a strided view over the record stream);
    bvecs and ivecs components are widened to float32 in memory, which is
    exact for uint8 and for ids below 2**24.
    """
    format = format or _detect_format(path)
    if format not in _FORMATS:
        raise UsageError(f"unknown format {format!r}; expected one of {_FORMATS}")
    size = os.path.getsize(path)
    if size == 0:
        return VectorSet(np.empty((0, 0), dtype=np.float32))
    dim = _first_dim(path)

    if format == "fvecs":
        record = 4 + 4 * dim
        if size % record:
            raise FormatError(f"{path}: size {size} is not a multiple of record size {record}")
        raw = np.memmap(path, dtype=np.float32, mode="r").reshape(-1, dim + 1)
        _check_prefixes(raw[:, 0].view(np.int32), dim, path)
        return VectorSet(raw[:, 1:], backing=Backing.FILE_MAPPED)

    if format == "bvecs":
        record = 4 + dim
        if size % record:
            raise FormatError(f"{path}: size {size} is not a multiple of record size {record}")
        raw = np.memmap(path, dtype=np.uint8, mode="r").reshape(-1, record)
        _check_prefixes(np.ascontiguousarray(raw[:, :4]).view("<i4").ravel(), dim, path)
        return VectorSet(raw[:, 4:].astype(np.float32))

    record = 4 + 4 * dim
    if size % record:
        raise FormatError(f"{path}: size {size} is not a multiple of record size {record}")
    raw = np.memmap(path, dtype="<i4", mode="r").reshape(-1, dim + 1)
    _check_prefixes(raw[:, 0], dim, path)
    return VectorSet(raw[:, 1:].astype(np.float32))


def read_ivecs(path) -> np.ndarray:
    """Ground-truth id rows as an (n, k) int32 array."""
    size = os.path.getsize(path)
    if size == 0:
        return np.empty((0, 0), dtype=np.int32)
    dim = _first_dim(path)
    record = 4 + 4 * dim
    if size % record:
        raise FormatError(f"{path}: size {size} is not a multiple of record size {record}")
    raw = np.fromfile(path, dtype="<i4").reshape(-1, dim + 1)
    _check_prefixes(raw[:, 0], dim, path)
    return np.ascontiguousarray(raw[:, 1:])


def write_fvecs(path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise UsageError("fvecs data must be 2-D")
    n, dim = data.shape
    out = np.empty((n, dim + 1), dtype="<f4")
    out[:, 0] = np.full(n, dim, dtype="<i4").view("<f4")
    out[:, 1:] = data
    out.tofile(path)


def write_ivecs(path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<i4")
    if data.ndim != 2:
        raise UsageError("ivecs data must be 2-D")
    n, dim = data.shape
    out = np.empty((n, dim + 1), dtype="<i4")
    out[:, 0] = dim
    out[:, 1:] = data
    out.tofile(path)
