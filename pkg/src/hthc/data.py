"""Training data containers, dataset ingestion, and synthetic generators.

The matrix layout is dense column-major: coordinate i of the model owns the
contiguous column d_i. Loaders produce matrices whose columns are the input
lines (samples); for feature-coordinate models like Lasso the caller
transposes so that coordinates run over features.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"HTHC"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}

_HEADER = struct.Struct("<QQB")  # d, n, dtype tag (after magic + version)


class ParseError(ValueError):
    """Malformed LIBSVM text input."""


class BinaryFormatError(ValueError):
    """Malformed binary matrix file."""


class DataMatrix:
    """Dense column-major d x n training matrix with cached column norms.

    Column i occupies contiguous storage; ``col_sq_norms[i]`` caches
    ||d_i||^2 (accumulated in double). Instances are treated as immutable
    after construction and may be read concurrently by any number of
    workers.
    """

    __slots__ = ("values", "col_sq_norms")

    def __init__(self, values, dtype=None):
        if dtype is None:
            # Single precision is the default; an explicitly typed float
            # array keeps its precision.
            if isinstance(values, np.ndarray) and values.dtype in (np.float32,
                                                                   np.float64):
                dtype = values.dtype
            else:
                dtype = np.float32
        arr = np.asfortranarray(values, dtype=dtype)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got {arr.ndim}-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix entries must be finite")
        self.values = arr
        self.col_sq_norms = column_sq_norms(arr)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def transposed(self) -> "DataMatrix":
        """Copy with rows and columns swapped (samples <-> coordinates)."""
        return DataMatrix(self.values.T, dtype=self.dtype)

    def __repr__(self) -> str:
        return f"DataMatrix(d={self.d}, n={self.n}, dtype={self.dtype})"


def column_sq_norms(values: np.ndarray) -> np.ndarray:
    """Per-column squared Euclidean norms, accumulated in double."""
    return np.add.reduce(np.square(values, dtype=np.float64), axis=0)


def scale_columns_by_labels(matrix: DataMatrix, labels: np.ndarray) -> DataMatrix:
    """New matrix with column i scaled by labels[i] (d_i := y_i * x_i)."""
    labels = np.asarray(labels)
    if labels.shape != (matrix.n,):
        raise ValueError(f"labels must have shape ({matrix.n},), got {labels.shape}")
    scaled = matrix.values * labels.astype(matrix.dtype)[np.newaxis, :]
    return DataMatrix(scaled, dtype=matrix.dtype)


@dataclass
class ModelState:
    """Model vector alpha (length n) and shared vector v = D alpha (length d)."""

    alpha: np.ndarray
    v: np.ndarray
    epoch: int = 0

    @classmethod
    def zeros(cls, d: int, n: int, dtype=np.float32) -> "ModelState":
        return cls(alpha=np.zeros(n, dtype=dtype), v=np.zeros(d, dtype=dtype))


@dataclass
class GapMemory:
    """Score vector z of last-computed coordinate duality gaps.

    Entries may be stale by design; z is only ever interpreted as a ranking.
    Write counters are flushed by scoring workers under the internal lock.
    """

    z: np.ndarray
    updates_this_epoch: int = 0
    total_updates: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def zeros(cls, n: int) -> "GapMemory":
        return cls(z=np.zeros(n, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def begin_epoch(self) -> None:
        with self._lock:
            self.updates_this_epoch = 0

    def record_writes(self, count: int) -> None:
        with self._lock:
            self.updates_this_epoch += count
            self.total_updates += count


# ---------------------------------------------------------------------------
# LIBSVM text ingestion.
# ---------------------------------------------------------------------------

def load_libsvm(path, densify: bool = True, dtype=np.float32):
    """Parse a LIBSVM text file into a dense matrix plus label vector.

    Each line is ``label idx:val idx:val ...`` with 1-based strictly
    ascending indices. Columns are the input lines; d is the largest feature
    index seen, absent indices are zero. Storage is dense only, so every
    feature, zero or not, is materialized.

    Returns (DataMatrix, labels) with labels of length n (float64).
    """
    if not densify:
        raise ValueError("only dense storage is supported; pass densify=True")
    labels: list[float] = []
    rows: list[tuple[list[int], list[float]]] = []
    d = 0
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                raise ParseError(f"line {lineno}: empty line")
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ParseError(f"line {lineno}: bad label {parts[0]!r}") from None
            idxs: list[int] = []
            vals: list[float] = []
            prev = 0
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(f"line {lineno}: expected idx:val, got {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"line {lineno}: bad feature {tok!r}") from None
                if idx <= prev:
                    raise ParseError(
                        f"line {lineno}: feature indices must be ascending "
                        f"(got {idx} after {prev})")
                idxs.append(idx)
                vals.append(val)
                prev = idx
            d = max(d, prev)
            labels.append(label)
            rows.append((idxs, vals))
    if not rows:
        raise ParseError("empty file")
    if d == 0:
        raise ParseError("no features present in file")
    values = np.zeros((d, len(rows)), dtype=dtype, order="F")
    for col, (idxs, vals) in enumerate(rows):
        values[np.asarray(idxs, dtype=np.intp) - 1, col] = vals
    return DataMatrix(values, dtype=dtype), np.asarray(labels, dtype=np.float64)


# ---------------------------------------------------------------------------
# Binary container: magic 'HTHC', version byte, <u64 d, u64 n, u8 dtype tag>,
# then d*n payload scalars column-major, little-endian.
# ---------------------------------------------------------------------------

def save_binary(matrix: DataMatrix, path) -> None:
    """Write the matrix to the binary container format (bit-exact payload)."""
    tag = _DTYPE_TAGS.get(matrix.dtype)
    if tag is None:
        raise BinaryFormatError(f"unsupported dtype {matrix.dtype}")
    payload = np.asfortranarray(matrix.values).astype(
        matrix.dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(_HEADER.pack(matrix.d, matrix.n, tag))
        fh.write(payload.tobytes(order="F"))


def load_binary(path) -> DataMatrix:
    """Read a matrix written by `save_binary`; round-trips bit-exactly."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 1 + _HEADER.size)
        if len(head) < len(MAGIC) + 1 + _HEADER.size:
            raise BinaryFormatError("truncated header")
        if head[:len(MAGIC)] != MAGIC:
            raise BinaryFormatError(f"bad magic {head[:len(MAGIC)]!r}")
        version = head[len(MAGIC)]
        if version != FORMAT_VERSION:
            raise BinaryFormatError(f"unsupported version {version}")
        d, n, tag = _HEADER.unpack(head[len(MAGIC) + 1:])
        dtype = _TAG_DTYPES.get(tag)
        if dtype is None:
            raise BinaryFormatError(f"unsupported dtype tag {tag}")
        if d < 1 or n < 1:
            raise BinaryFormatError(f"bad dimensions d={d}, n={n}")
        expected = d * n * dtype.itemsize
        payload = fh.read(expected)
        if len(payload) < expected:
            raise BinaryFormatError(
                f"truncated payload: expected {expected} bytes, got {len(payload)}")
        if fh.read(1):
            raise BinaryFormatError("trailing bytes after payload")
    values = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(
        dtype, copy=False)
    return DataMatrix(values.reshape((d, n), order="F"), dtype=dtype)


def save_vector(vec: np.ndarray, path) -> None:
    """Store a 1-D vector (labels/targets) as a single-column container."""
    save_binary(DataMatrix(np.asarray(vec).reshape(-1, 1)), path)


def load_vector(path) -> np.ndarray:
    m = load_binary(path)
    if m.n != 1:
        raise BinaryFormatError(f"expected a single-column vector file, got n={m.n}")
    return m.values[:, 0].copy()


# ---------------------------------------------------------------------------
# Synthetic instances.
# ---------------------------------------------------------------------------

def synth_lasso(n: int, d: int, support_frac: float, noise_sd: float, seed: int,
                dtype=np.float32):
    """Sparse-recovery instance: normalized Gaussian columns, a sparse true
    model, and targets = D alpha_true + noise. Deterministic per seed.

    Returns (DataMatrix, targets, alpha_true) with targets of length d.
    """
    if not (0.0 < support_frac <= 1.0):
        raise ValueError("support_frac must be in (0, 1]")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((d, n))
    norms = np.linalg.norm(cols, axis=0)
    norms[norms == 0.0] = 1.0
    cols /= norms
    k = math.ceil(support_frac * n)
    support = rng.choice(n, size=k, replace=False)
    alpha_true = np.zeros(n, dtype=np.float64)
    alpha_true[support] = rng.standard_normal(k)
    matrix = DataMatrix(cols, dtype=dtype)
    targets = matrix.values.astype(np.float64) @ alpha_true
    if noise_sd > 0:
        targets = targets + noise_sd * rng.standard_normal(d)
    return matrix, targets, alpha_true


def synth_svm(n: int, d: int, seed: int, flip_frac: float = 0.0, dtype=np.float32):
    """Linear classification instance: normalized Gaussian sample columns and
    labels from a random hyperplane, optionally with a flipped fraction.

    Returns (DataMatrix, labels) where column i is sample x_i (labels not
    yet folded in) and labels are +-1 of length n.
    """
    if not (0.0 <= flip_frac < 1.0):
        raise ValueError("flip_frac must be in [0, 1)")
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((d, n))
    norms = np.linalg.norm(cols, axis=0)
    norms[norms == 0.0] = 1.0
    cols /= norms
    w_true = rng.standard_normal(d)
    labels = np.where(w_true @ cols >= 0.0, 1.0, -1.0)
    if flip_frac > 0:
        nflip = int(flip_frac * n)
        if nflip:
            labels[rng.choice(n, size=nflip, replace=False)] *= -1.0
    return DataMatrix(cols, dtype=dtype), labels
