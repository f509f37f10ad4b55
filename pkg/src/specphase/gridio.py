"""On-disk grid formats: a small versioned binary blob and plain CSV."""

from __future__ import annotations

import csv
import struct

import numpy as np

GRID_MAGIC = b"SPECGRD\x00"
GRID_VERSION = 1


def save_grid(path, values) -> None:
    """Write a float array as: 8-byte magic, <u4 version, <u4 ndim, <u8 dims,
    then the little-endian float64 payload in C order."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<I", GRID_VERSION))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def load_grid(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != GRID_MAGIC:
            raise ValueError(f"not a grid blob: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != GRID_VERSION:
            raise ValueError(f"unsupported grid version {version}")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
        count = int(np.prod(shape)) if shape else 1
        buf = f.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated grid payload")
        if f.read(1):
            raise ValueError("trailing bytes after grid payload")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)


def save_grid_csv(path, values) -> None:
    """One CSV row per grid row; floats use their shortest exact repr."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"CSV grids must be 2-D, got shape {arr.shape}")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in arr:
            writer.writerow([repr(v) for v in row.tolist()])


def load_grid_csv(path) -> np.ndarray:
    with open(path, "r", newline="") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    return np.asarray(rows, dtype=np.float64)


def write_csv(path, header, rows) -> None:
    """Generic CSV writer; floats are serialized with repr for exactness."""

    def cell(v):
        if isinstance(v, float):
            return repr(v)
        return v

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([cell(v) for v in row])
