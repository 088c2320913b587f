"""Co-neighbor similarity and top-k attention refinement.

Two pixels are co-neighbors when their attention rows agree. The similarity
is the Bhattacharyya coefficient of the rows, computed as one symmetric GEMM
of sqrt(A) with itself. Refinement keeps, per row, only the k most similar
columns of A and renormalizes, yielding a sparse row-stochastic operator.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrayio import DEFAULT_DTYPES, INDEX_DTYPES, read_array, write_array
from .cam import AttentionMatrix
from .errors import (
    GridMismatch,
    InvalidAttention,
    KOutOfRange,
    NonFiniteInput,
    ShapeMismatch,
)

BLOCK = 256
ROW_ZERO_GUARD = 1e-12


@dataclass(frozen=True)
class RefinedAttention:
    """Row-stochastic operator in CSR form over an h x w grid.

    Column indices within a row are strictly increasing.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    grid: tuple[int, int]

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_ids(self) -> np.ndarray:
        """Source row of every stored entry."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.row_ids(), self.indices] = self.data
        return out

    @classmethod
    def from_dense(cls, a, grid=None) -> "RefinedAttention":
        """Wrap a dense row-stochastic matrix, dropping exact zeros."""
        if isinstance(a, AttentionMatrix):
            grid = a.grid if grid is None else grid
            a = a.data
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a)
        indptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=a.shape[0]), out=indptr[1:])
        return cls(indptr, cols.astype(np.int64), a[rows, cols], _grid_for(a.shape[0], grid))


def _grid_for(n, grid):
    if grid is None:
        return (1, n)
    h, w = grid
    if h * w != n:
        raise GridMismatch(f"grid {grid} does not hold {n} tokens")
    return (int(h), int(w))


def _unwrap(a):
    if isinstance(a, AttentionMatrix):
        return a.data, a.grid
    return np.asarray(a, dtype=np.float64), None


def similarity(a, block: int = BLOCK) -> np.ndarray:
    """S_ij = sum_k sqrt(A_ik A_jk), clamped to [0, 1].

    Only tiles on or above the block diagonal are multiplied; the lower
    triangle is mirrored, so the result is exactly symmetric.
    """
    a, _ = _unwrap(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"attention must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("attention contains non-finite values")
    if (a < 0).any():
        raise InvalidAttention("attention has negative entries")
    n = a.shape[0]
    b = np.sqrt(a)
    s = np.empty((n, n))
    for i0 in range(0, n, block):
        bi = b[i0 : i0 + block]
        i1 = i0 + bi.shape[0]
        diag = bi @ bi.T
        s[i0:i1, i0:i1] = np.triu(diag) + np.triu(diag, 1).T
        for j0 in range(i1, n, block):
            tile = bi @ b[j0 : j0 + block].T
            s[i0:i1, j0 : j0 + tile.shape[1]] = tile
            s[j0 : j0 + tile.shape[1], i0:i1] = tile.T
    np.clip(s, 0.0, 1.0, out=s)
    return s


def topk_mask(s: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row, ties to the lower column."""
    n = s.shape[1]
    if k == n:
        return np.ones(s.shape, dtype=bool)
    kth = np.partition(s, n - k, axis=1)[:, n - k][:, None]
    above = s > kth
    need = k - above.sum(axis=1, keepdims=True)
    tied = s == kth
    return above | (tied & (np.cumsum(tied, axis=1) <= need))


def refine(a, s: np.ndarray, k: int, grid=None, block: int = BLOCK) -> RefinedAttention:
    """NORM(TOP(S, k) * A) as a CSR operator.

    Rows whose surviving mass is below 1e-12 become a pure self-loop.
    """
    a, a_grid = _unwrap(a)
    grid = _grid_for(a.shape[0], grid if grid is not None else a_grid)
    s = np.asarray(s, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or s.shape != (n, n):
        raise ShapeMismatch(f"attention {a.shape} and similarity {s.shape} must both be n x n")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
        raise NonFiniteInput("attention or similarity contains non-finite values")
    try:
        k = operator.index(k)
    except TypeError as exc:
        raise KOutOfRange(f"k must be an integer, got {k!r}") from exc
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")

    counts = np.empty(n, dtype=np.int64)
    indices, data = [], []
    for r0 in range(0, n, block):
        a_blk = a[r0 : r0 + block]
        kept = np.where(topk_mask(s[r0 : r0 + block], k), a_blk, 0.0)
        mass = kept.sum(axis=1)
        degenerate = mass < ROW_ZERO_GUARD
        mass[degenerate] = 1.0
        kept /= mass[:, None]
        rows = np.arange(r0, r0 + a_blk.shape[0])
        kept[degenerate] = 0.0
        kept[degenerate, rows[degenerate]] = 1.0
        r, c = np.nonzero(kept)
        counts[r0 : r0 + a_blk.shape[0]] = np.bincount(r, minlength=a_blk.shape[0])
        indices.append(c)
        data.append(kept[r, c])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return RefinedAttention(indptr, np.concatenate(indices).astype(np.int64), np.concatenate(data), grid)


def jaccard(support_i, support_j) -> float:
    si, sj = set(support_i), set(support_j)
    union = si | sj
    return len(si & sj) / len(union) if union else 1.0


def jaccard_similarity_form(j: float) -> float:
    """2J / (1 + J): co-neighbor similarity of two uniform rows with equal support size."""
    return 2.0 * j / (1.0 + j)


def save_refined(att: RefinedAttention, prefix, k: int | None = None) -> Path:
    """Write ``<prefix>_indptr/_indices/_weights.npy`` plus ``<prefix>.json``."""
    prefix = Path(prefix)
    if att.n >= 2**32 or att.nnz >= 2**32:
        raise ShapeMismatch("operator too large for uint32 CSR storage")
    write_array(f"{prefix}_indptr.npy", att.indptr.astype("<u4"), allowed=INDEX_DTYPES)
    write_array(f"{prefix}_indices.npy", att.indices.astype("<u4"), allowed=INDEX_DTYPES)
    write_array(f"{prefix}_weights.npy", att.data.astype(np.float32))
    meta = {
        "grid": list(att.grid),
        "row_offsets": f"{prefix.name}_indptr.npy",
        "column_indices": f"{prefix.name}_indices.npy",
        "weights": f"{prefix.name}_weights.npy",
    }
    if k is not None:
        meta["k"] = int(k)
    out = prefix.with_name(prefix.name + ".json")
    out.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_refined(meta_path) -> RefinedAttention:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    base = meta_path.parent
    indptr = read_array(base / meta["row_offsets"], allowed=INDEX_DTYPES).astype(np.int64)
    indices = read_array(base / meta["column_indices"], allowed=INDEX_DTYPES).astype(np.int64)
    data = read_array(base / meta["weights"], allowed=DEFAULT_DTYPES).astype(np.float64)
    n = len(indptr) - 1
    if indptr[0] != 0 or indptr[-1] != len(indices) or len(data) != len(indices) or (np.diff(indptr) < 0).any():
        raise ShapeMismatch(f"{meta_path}: inconsistent CSR arrays")
    if len(indices) and indices.max() >= n:
        raise ShapeMismatch(f"{meta_path}: column index out of range")
    return RefinedAttention(indptr, indices, data, _grid_for(n, tuple(meta["grid"])))
