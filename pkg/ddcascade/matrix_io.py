"""DD matrix files and CSV output.

File layout (all little-endian):

    offset 0   4 bytes   magic b"DDM1"
    offset 4   uint64    rows
    offset 12  uint64    cols
    offset 20  payload   rows * cols pairs of binary64 (hi, lo), row-major

See docs/MATRIX_FILE_FORMAT.md for the full contract.

Example:
    >>> from ddcascade.matrix_io import write_matrix, read_matrix
    >>> digest = write_matrix('A.ddm', A)
    >>> assert read_matrix('A.ddm').bitwise_equal(A)
"""

import csv
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, Sequence, Union

import numpy as np

from ddcascade.exactref import MatrixDD
from ddcascade.validators import ValidationError


logger = logging.getLogger(__name__)

MAGIC = b"DDM1"
HEADER = struct.Struct('<4sQQ')
PAIR_DTYPE = np.dtype('<f8')

PathLike = Union[str, Path]


class MatrixFileError(IOError):
    """Raised for unreadable, malformed or invalid matrix files."""
    pass


def encode_matrix(M: MatrixDD) -> bytes:
    """Serialize a MatrixDD into the DDM1 byte layout.

    Raises:
        MatrixFileError: If M holds non-finite or overlapping pairs
    """
    try:
        M.validate('matrix')
    except ValidationError as e:
        raise MatrixFileError(f"refusing to encode invalid matrix: {e}")
    pairs = np.empty((M.rows, M.cols, 2), dtype=PAIR_DTYPE)
    pairs[:, :, 0] = M.hi
    pairs[:, :, 1] = M.lo
    return HEADER.pack(MAGIC, M.rows, M.cols) + pairs.tobytes()


def decode_matrix(data: bytes) -> MatrixDD:
    """Parse DDM1 bytes back into a MatrixDD.

    Raises:
        MatrixFileError: On bad magic, wrong payload length, non-finite values
            or overlapping pairs
    """
    if len(data) < HEADER.size:
        raise MatrixFileError(f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MatrixFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 16 * rows * cols
    if len(data) != expected:
        raise MatrixFileError(f"payload holds {len(data) - HEADER.size} bytes, "
                              f"expected {16 * rows * cols} for {rows}x{cols}")
    if rows * cols == 0:
        return MatrixDD.zeros(rows, cols)
    pairs = np.frombuffer(data, dtype=PAIR_DTYPE, offset=HEADER.size).reshape(rows, cols, 2)
    M = MatrixDD(pairs[:, :, 0].astype(np.float64), pairs[:, :, 1].astype(np.float64))
    try:
        M.validate('matrix file')
    except ValidationError as e:
        raise MatrixFileError(str(e))
    return M


def content_hash(M: MatrixDD) -> str:
    """SHA-256 hex digest of the encoded matrix."""
    return hashlib.sha256(encode_matrix(M)).hexdigest()


def write_matrix(path: PathLike, M: MatrixDD) -> str:
    """Write M to path and return its content hash.

    Raises:
        MatrixFileError: If the matrix is invalid or the file cannot be written
    """
    data = encode_matrix(M)
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise MatrixFileError(f"cannot write {path}: {e}")
    logger.debug(f"Wrote {M.rows}x{M.cols} matrix to {path}")
    return hashlib.sha256(data).hexdigest()


def read_matrix(path: PathLike) -> MatrixDD:
    """Read a DDM1 file.

    Raises:
        MatrixFileError: If the file is missing, unreadable or malformed
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise MatrixFileError(f"cannot read {path}: {e}")
    try:
        return decode_matrix(data)
    except MatrixFileError as e:
        raise MatrixFileError(f"{path}: {e}")


def format_float(x: float) -> str:
    """Shortest round-trip decimal of a binary64."""
    return repr(float(x))


def format_hex(x: float) -> str:
    """Exact hexadecimal form of a binary64."""
    return float(x).hex()


def write_csv(path: PathLike, fieldnames: Sequence[str], rows: Iterable[Dict]) -> int:
    """Write dict rows with csv.DictWriter; returns the number of data rows.

    Raises:
        MatrixFileError: If the file cannot be written
    """
    count = 0
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames))
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
                count += 1
    except OSError as e:
        raise MatrixFileError(f"cannot write {path}: {e}")
    return count
