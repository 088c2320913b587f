"""Boundary-gated random-walk refinement of activation maps.

The transition matrix lives on the 8-connected feature grid. Affinity
between neighbors p and q is (1 - max(b(p), b(q)))**beta, every pixel keeps
a self-loop of weight 1, and rows are normalized.
"""

from __future__ import annotations

import numpy as np

from .cam import max_normalize
from .coneighbor import RefinedAttention
from .errors import GridMismatch, InputError, NonFiniteInput

DEFAULT_RW_STEPS = 16
DEFAULT_BETA = 8.0

_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def _check_boundary(b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or min(b.shape) < 1:
        raise GridMismatch(f"boundary map must be h x w, got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise NonFiniteInput("boundary map contains non-finite values")
    if (b < 0).any() or (b > 1).any():
        raise InputError("boundary values must lie in [0, 1]")
    return b


def build_transition(b: np.ndarray, beta: float = DEFAULT_BETA) -> RefinedAttention:
    """Row-stochastic 8-neighborhood transition matrix in CSR form."""
    b = _check_boundary(b)
    if not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    h, w = b.shape
    n = h * w
    ys, xs = np.divmod(np.arange(n), w)

    # offsets are visited in row-major order so columns come out sorted
    cols, weights = [], []
    for dy, dx in _OFFSETS:
        qy, qx = ys + dy, xs + dx
        valid = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
        q = np.where(valid, qy * w + qx, 0)
        if dy == 0 and dx == 0:
            aff = np.ones(n)
        else:
            aff = np.where(valid, (1.0 - np.maximum(b.reshape(-1), b.reshape(-1)[q])) ** beta, 0.0)
        cols.append(np.where(valid, q, -1))
        weights.append(aff)
    cols = np.stack(cols, axis=1)
    weights = np.stack(weights, axis=1)
    keep = (cols >= 0) & (weights > 0)
    weights = np.where(keep, weights, 0.0)
    weights /= weights.sum(axis=1, keepdims=True)

    r, slot = np.nonzero(keep)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=indptr[1:])
    return RefinedAttention(indptr, cols[r, slot].astype(np.int64), weights[r, slot], (h, w))


def apply(t: RefinedAttention, v: np.ndarray) -> np.ndarray:
    """(T v)[i] = sum_j T[i, j] v[j]."""
    return np.bincount(t.row_ids(), weights=t.data * v[t.indices], minlength=t.n)


def rw_refine(m: np.ndarray, b: np.ndarray, t: RefinedAttention, steps: int = DEFAULT_RW_STEPS, renormalize: bool = True) -> np.ndarray:
    """vec(M_hat) = T^l vec(M * (1 - B)), then max-normalized."""
    m = np.asarray(m, dtype=np.float64)
    b = _check_boundary(b)
    if m.shape != b.shape or m.shape != tuple(t.grid):
        raise GridMismatch(f"map {m.shape}, boundary {b.shape} and transition grid {t.grid} differ")
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise InputError(f"random-walk steps must be a positive integer, got {steps!r}")
    if (m < 0).any():
        raise InputError("activation map must be non-negative")
    v = (m * (1.0 - b)).reshape(-1)
    for _ in range(steps):
        v = apply(t, v)
    out = v.reshape(m.shape)
    return max_normalize(out) if renormalize else out
