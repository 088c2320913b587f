"""Attention-based activation diffusion and the end-to-end AD-CAM pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import coneighbor
from .cam import AttentionMatrix, aggregate_attention, compute_cam, max_normalize
from .coneighbor import RefinedAttention
from .errors import ClassOutOfRange, GridMismatch, InputError, NonFiniteInput

DEFAULT_K = 50
DEFAULT_STEPS = 2


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = DEFAULT_STEPS
    renormalize_output: bool = True

    def __post_init__(self):
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise InputError(f"diffusion steps must be a positive integer, got {self.steps!r}")


def transpose_apply(att: RefinedAttention, v: np.ndarray, src=None) -> np.ndarray:
    """out[i] = sum_j att[j, i] * v[j].

    Each stored edge j -> i pushes v[j] * weight into i. bincount sums in
    storage order, so the result does not depend on thread count.
    """
    if src is None:
        src = att.row_ids()
    return np.bincount(att.indices, weights=att.data * v[src], minlength=att.n)


def diffuse(m0: np.ndarray, att: RefinedAttention, cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    """Run ``cfg.steps`` steps of v <- A~^T v on the row-major vectorized map."""
    m0 = np.asarray(m0, dtype=np.float64)
    if m0.shape != tuple(att.grid):
        raise GridMismatch(f"map {m0.shape} does not match attention grid {att.grid}")
    if not np.all(np.isfinite(m0)):
        raise NonFiniteInput("activation map contains non-finite values")
    if (m0 < 0).any():
        raise InputError("activation map must be non-negative")

    # gather row ids once; every step reuses them
    src = att.row_ids()
    v = m0.reshape(-1)
    for _ in range(cfg.steps):
        v = transpose_apply(att, v, src)
    out = v.reshape(m0.shape)
    return max_normalize(out) if cfg.renormalize_output else out


@dataclass
class PreparedAttention:
    """Per-image attention products shared by every class and grid point."""

    attention: AttentionMatrix
    similarity: np.ndarray

    def refined(self, k: int) -> RefinedAttention:
        return coneighbor.refine(self.attention, self.similarity, k)

    def unrefined(self) -> RefinedAttention:
        return RefinedAttention.from_dense(self.attention)


def prepare_attention(stack: np.ndarray, grid: tuple[int, int]) -> PreparedAttention:
    a = aggregate_attention(stack, grid)
    return PreparedAttention(a, coneighbor.similarity(a))


def ad_cam(
    features: np.ndarray,
    weights: np.ndarray,
    stack: np.ndarray,
    labels,
    k: int = DEFAULT_K,
    cfg: DiffusionConfig = DiffusionConfig(),
    refine: bool = True,
) -> dict[int, np.ndarray]:
    """AD-CAM for each labeled class, keyed by class row in ``weights``.

    Attention is aggregated and refined once per image. With
    ``refine=False`` the raw aggregated attention drives the diffusion
    (the ablation without co-neighbor filtering).
    """
    labels = list(labels)
    if not labels:
        raise InputError("at least one labeled class is required")
    num_classes = np.shape(weights)[0]
    for c in labels:
        if not 0 <= c < num_classes:
            raise ClassOutOfRange(f"label {c} not in [0, {num_classes})")
    grid = tuple(np.shape(features)[1:])
    cams = {c: compute_cam(features, weights, c) for c in labels}
    if refine:
        prepared = prepare_attention(stack, grid)
        att = prepared.refined(k)
    else:
        att = RefinedAttention.from_dense(aggregate_attention(stack, grid))
    return {c: diffuse(m, att, cfg) for c, m in cams.items()}
