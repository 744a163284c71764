import struct
from pathlib import Path

import numpy as np

from icabench.preprocessing.whitening import DataMatrix, as_data_matrix
from icabench.utils.errors import MatrixFormatError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)

BINARY_MAGIC = b"ICAB1"
BINARY_SUFFIX = ".icab"
# N then T, both unsigned 64-bit little-endian.
BINARY_HEADER = struct.Struct("<QQ")
BINARY_DTYPE = np.dtype("<f8")
PAYLOAD_OFFSET = len(BINARY_MAGIC) + BINARY_HEADER.size

CSV_FORMAT = "%.17g"


def is_binary_path(path: str | Path) -> bool:
    return Path(path).suffix.lower() == BINARY_SUFFIX


def save_matrix(path: str | Path, data) -> Path:
    """
    Writes an N×T matrix; the format follows the file suffix.

    - `.icab`: magic "ICAB1", N and T as little-endian uint64, then the N·T values
      as little-endian float64 in row-major order.
    - anything else: CSV, one row per line, values with 17 significant digits, no header.

    Args:
        path (str | Path): Destination file; parent directories are created.
        data (DataMatrix | np.ndarray): The matrix.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    values = as_data_matrix(data).values
    path.parent.mkdir(parents=True, exist_ok=True)

    if is_binary_path(path):
        n_rows, n_cols = values.shape
        with open(path, "wb") as f:
            f.write(BINARY_MAGIC)
            f.write(BINARY_HEADER.pack(n_rows, n_cols))
            f.write(np.ascontiguousarray(values, dtype=BINARY_DTYPE).tobytes())
    else:
        np.savetxt(path, values, fmt=CSV_FORMAT, delimiter=",")

    logger.info(f"Saved {values.shape[0]}×{values.shape[1]} matrix to {path}")
    return path


def load_matrix(path: str | Path) -> DataMatrix:
    """
    Reads a matrix written by `save_matrix` (or any headerless numeric CSV).

    Args:
        path (str | Path): Source file; `.icab` is read as binary, anything else as CSV.

    Returns:
        DataMatrix: The matrix.

    Raises:
        FileNotFoundError: If the file does not exist.
        MatrixFormatError: On ragged rows, non-numeric tokens, a bad magic or a
            truncated binary payload. Carries the 1-based line (CSV) or byte offset (binary).
    """
    path = Path(path)
    values = _read_binary(path) if is_binary_path(path) else _read_csv(path)
    logger.debug(f"Loaded {values.shape[0]}×{values.shape[1]} matrix from {path}")
    return DataMatrix(values)


def _read_csv(path: Path) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    # Trailing blank lines are tolerated, blank lines in between are not.
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MatrixFormatError(f"{path}: empty CSV file", line=1)

    for line_number, line in enumerate(lines, start=1):
        tokens = line.split(",")
        try:
            row = [float(token) for token in tokens]
        except ValueError:
            bad = next(token for token in tokens if not _is_number(token))
            raise MatrixFormatError(f"{path}: line {line_number}: non-numeric token '{bad.strip()}'", line=line_number) from None
        if rows and len(row) != len(rows[0]):
            raise MatrixFormatError(
                f"{path}: line {line_number}: ragged row with {len(row)} values, expected {len(rows[0])}",
                line=line_number,
            )
        rows.append(row)

    return np.array(rows, dtype=np.float64)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _read_binary(path: Path) -> np.ndarray:
    raw = path.read_bytes()

    if raw[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise MatrixFormatError(f"{path}: missing ICAB1 magic", offset=0)
    if len(raw) < PAYLOAD_OFFSET:
        raise MatrixFormatError(f"{path}: truncated header ({len(raw)} bytes)", offset=len(raw))

    n_rows, n_cols = BINARY_HEADER.unpack_from(raw, len(BINARY_MAGIC))
    expected = n_rows * n_cols * BINARY_DTYPE.itemsize
    payload = raw[PAYLOAD_OFFSET:]
    if len(payload) < expected:
        raise MatrixFormatError(
            f"{path}: truncated payload, expected {expected} bytes for {n_rows}×{n_cols} values, found {len(payload)}",
            offset=PAYLOAD_OFFSET + len(payload),
        )
    if len(payload) > expected:
        raise MatrixFormatError(
            f"{path}: {len(payload) - expected} unexpected bytes after the payload",
            offset=PAYLOAD_OFFSET + expected,
        )

    return np.frombuffer(payload, dtype=BINARY_DTYPE).reshape(n_rows, n_cols).astype(np.float64)
