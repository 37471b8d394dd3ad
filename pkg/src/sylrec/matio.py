"""Binary matrix files shared by features and posteriors.

Layout: magic ``SYLF``, uint32 rows, uint32 cols, then row-major
float32 values, all little-endian. A text dump mode exists for
debugging; it is not meant to round-trip.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SYLF"


def write_matrix(path, mat) -> None:
    mat = np.asarray(mat, dtype=np.float32)
    if mat.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {mat.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        fh.write(mat.astype("<f4").tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = fh.read(4 * rows * cols)
    if len(data) != 4 * rows * cols:
        raise ValueError(f"{path}: truncated matrix payload")
    mat = np.frombuffer(data, dtype="<f4").reshape(rows, cols)
    return mat.astype(np.float64)


def dump_matrix_text(mat, fh) -> None:
    mat = np.asarray(mat)
    fh.write(f"rows {mat.shape[0]} cols {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
