"""Vanilla class activation maps and attention aggregation.

All computation happens in float64; arrays coming from files are float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ChannelMismatch,
    ClassOutOfRange,
    InvalidAttention,
    InvalidTarget,
    NonFiniteInput,
    ShapeMismatch,
)

# below this the max-normalization is undefined and the map is all zeros
ZERO_GUARD = 1e-12
STACK_ROW_TOL = 1e-4


@dataclass(frozen=True)
class AttentionMatrix:
    """Dense n x n row-stochastic attention over an h x w token grid.

    Token ``i`` sits at ``(i // w, i % w)``.
    """

    data: np.ndarray
    grid: tuple[int, int]

    @property
    def n(self) -> int:
        return self.data.shape[0]


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{what} contains non-finite values")


def max_normalize(m: np.ndarray) -> np.ndarray:
    """Divide by the maximum; maps whose maximum is ~0 become all zeros."""
    peak = float(m.max()) if m.size else 0.0
    if peak < ZERO_GUARD:
        return np.zeros_like(m, dtype=np.float64)
    return m / peak


def class_logits(features: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    """F_k = w_k^T f(x) as an h x w map."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 3 or min(features.shape) < 1:
        raise ShapeMismatch(f"features must be C x h x w, got {features.shape}")
    if weights.ndim != 2 or min(weights.shape) < 1:
        raise ShapeMismatch(f"weights must be K x C, got {weights.shape}")
    if weights.shape[1] != features.shape[0]:
        raise ChannelMismatch(f"weights have {weights.shape[1]} channels, features {features.shape[0]}")
    if not 0 <= k < weights.shape[0]:
        raise ClassOutOfRange(f"class {k} not in [0, {weights.shape[0]})")
    _finite(features, "features")
    _finite(weights, "weights")
    return np.tensordot(weights[k], features, axes=(0, 0))


def compute_cam(features: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    """ReLU(F_k) / max(ReLU(F_k)) for class row ``k`` of ``weights``."""
    return max_normalize(np.maximum(class_logits(features, weights, k), 0.0))


def aggregate_attention(stack: np.ndarray, grid: tuple[int, int]) -> AttentionMatrix:
    """Average an L x H x n x n attention stack over heads, then layers.

    Rows are renormalized afterwards so the result is row-stochastic to
    machine precision even when the export was float32.
    """
    stack = np.asarray(stack)
    h, w = grid
    if stack.ndim != 4 or stack.shape[2] != stack.shape[3] or min(stack.shape) < 1:
        raise ShapeMismatch(f"attention must be L x H x n x n, got {stack.shape}")
    n = stack.shape[2]
    if n != h * w:
        raise ShapeMismatch(f"{n} tokens do not form the {h} x {w} feature grid")
    _finite(stack, "attention")
    if (stack < 0).any():
        raise InvalidAttention("attention has negative entries")
    sums = stack.sum(axis=3, dtype=np.float64)
    if np.abs(sums - 1.0).max() > STACK_ROW_TOL:
        raise InvalidAttention("attention rows do not sum to 1")

    per_layer = stack.astype(np.float64).mean(axis=1)
    a = per_layer.mean(axis=0)
    a /= a.sum(axis=1, keepdims=True)
    return AttentionMatrix(a, (h, w))


def _axis_weights(n_src: int, n_dst: int):
    scale = n_src / n_dst
    src = (np.arange(n_dst) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_src - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = src - lo
    return lo, hi, frac


def upsample_bilinear(m: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    m = np.asarray(m, dtype=np.float64)
    th, tw = target
    if th <= 0 or tw <= 0:
        raise InvalidTarget(f"target {target} has a zero dimension")
    if th < m.shape[0] or tw < m.shape[1]:
        raise InvalidTarget(f"target {target} is smaller than source {m.shape}")
    if (th, tw) == m.shape:
        return m.copy()
    y0, y1, fy = _axis_weights(m.shape[0], th)
    x0, x1, fx = _axis_weights(m.shape[1], tw)
    rows = m[y0] * (1 - fy)[:, None] + m[y1] * fy[:, None]
    out = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    # convex combinations can overshoot by an ulp
    return np.clip(out, m.min(), m.max())
