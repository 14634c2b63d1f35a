"""CCMX dense matrix files and CSV export.

Layout: 16-byte header (magic ``CCMX``, u32 rows, u32 cols, u32 reserved,
little-endian), then row-major float64 payload.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"CCMX"
_HEADER = struct.Struct("<4sIII")


def write_ccmx(path, matrix) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise DataError("CCMX stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.shape[0], matrix.shape[1], 0))
        fh.write(matrix.tobytes())


def read_ccmx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DataError(f"{path}: truncated CCMX header")
        magic, rows, cols, _ = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise DataError(f"{path}: truncated CCMX payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def write_csv_matrix(path, matrix, header=None) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(str(h) for h in header) + "\n")
        for row in np.atleast_2d(matrix):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
