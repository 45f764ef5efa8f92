"""Dataset ingestion and synthetic generators."""
from __future__ import annotations

import gzip
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from ..rng import generator

DATA_DIR_ENV = "BILEVELOPT_DATA_DIR"


def data_dir() -> Path:
    """Dataset cache root: ``$BILEVELOPT_DATA_DIR`` or ``~/.cache/bilevelopt``."""
    root = os.environ.get(DATA_DIR_ENV)
    return Path(root) if root else Path.home() / ".cache" / "bilevelopt"


class LibsvmParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class SparseDataset:
    """Rows stored as a CSR matrix with 0-based, strictly increasing columns."""

    rows: sparse.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        self.rows = sparse.csr_matrix(self.rows)
        self.labels = np.asarray(self.labels)
        if self.rows.shape[0] != self.labels.shape[0]:
            raise ValueError("number of rows and labels differ")

    @property
    def dims(self) -> tuple[int, int]:
        return self.rows.shape

    def __len__(self) -> int:
        return self.rows.shape[0]

    def subset(self, start: int, stop: int) -> "SparseDataset":
        return SparseDataset(self.rows[start:stop], self.labels[start:stop])


def _parse_label(tok: str):
    value = float(tok)
    return int(value) if value.is_integer() else value


def parse_libsvm(stream, num_features: int | None = None) -> SparseDataset:
    """Parse libsvm text: ``label idx:val idx:val ...`` with 1-based ascending
    indices.  Blank lines and ``#`` comments are skipped.

    ``stream`` is any iterable of lines (an open file, ``io.StringIO``, a list).
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, indptr, indices, values = [], [0], [], []
    max_col = -1
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(_parse_label(tokens[0]))
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibsvmParseError(lineno, f"index {idx} not ascending after {prev}")
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_col = max(max_col, prev - 1)
        indptr.append(len(indices))
    ncols = max_col + 1 if num_features is None else num_features
    if max_col >= ncols:
        raise ValueError(f"feature index {max_col + 1} exceeds num_features={ncols}")
    rows = sparse.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), ncols),
    )
    return SparseDataset(rows, np.array(labels))


def load_libsvm(path, num_features: int | None = None) -> SparseDataset:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    if path.suffix == ".bz2":
        import bz2

        opener = bz2.open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh, num_features)


def serialize_libsvm(dataset: SparseDataset) -> str:
    """Inverse of :func:`parse_libsvm` (values written with ``repr`` so floats
    round-trip exactly)."""
    out = []
    rows = dataset.rows
    for r, label in enumerate(dataset.labels):
        lo, hi = rows.indptr[r], rows.indptr[r + 1]
        parts = [repr(label.item() if hasattr(label, "item") else label)]
        parts += [f"{c + 1}:{float(v)!r}" for c, v in zip(rows.indices[lo:hi], rows.data[lo:hi])]
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path_or_bytes) -> np.ndarray:
    """Read an IDX file (MNIST format), optionally gzip-compressed.

    Images use magic ``0x00000803`` and labels ``0x00000801``; dimensions are
    big-endian 32-bit integers.
    """
    if isinstance(path_or_bytes, (bytes, bytearray)):
        raw = bytes(path_or_bytes)
    else:
        raw = Path(path_or_bytes).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in _IDX_DTYPES:
        raise ValueError(f"bad IDX magic {raw[:4].hex()}")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=_IDX_DTYPES[dtype_code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(shape)):
        raise ValueError("IDX payload size does not match header")
    return data.reshape(shape).astype(data.dtype.newbyteorder("="))


def corrupt_labels(labels, p_corrupt: float, num_classes: int, seed):
    """Resample each label uniformly from ``{0, ..., num_classes-1}`` with
    probability ``p_corrupt``.  Returns ``(new_labels, mask)``; the mask marks
    resampled positions even when the new label equals the old one."""
    if not 0.0 <= p_corrupt <= 1.0:
        raise ValueError(f"p_corrupt must be in [0, 1], got {p_corrupt}")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("labels must lie in [0, num_classes)")
    rng = generator(seed)
    mask = rng.random(labels.shape[0]) < p_corrupt
    new = labels.copy()
    new[mask] = rng.integers(0, num_classes, size=int(mask.sum()))
    return new, mask


def make_binary_classification(n: int, p: int, seed, noise: float = 1.0):
    """Dense Gaussian features and +-1 labels from a noisy linear model."""
    rng = generator(seed)
    X = rng.standard_normal((n, p))
    w = rng.standard_normal(p)
    y = np.where(X @ w + noise * rng.standard_normal(n) >= 0, 1, -1)
    return X, y


def make_multiclass(n: int, p: int, num_classes: int, seed, separation: float = 1.0):
    """Gaussian class clusters: features ``mu_y + N(0, I)`` with random means."""
    rng = generator(seed)
    means = separation * rng.standard_normal((num_classes, p))
    y = rng.integers(0, num_classes, size=n)
    X = means[y] + rng.standard_normal((n, p))
    return X, y
