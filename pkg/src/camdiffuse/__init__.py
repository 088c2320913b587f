"""Refine class activation maps by diffusing them along co-neighbor-filtered
transformer attention, then threshold and score the resulting seed masks."""

__version__ = "0.1.0"

from .arrayio import load_instance, read_array, write_array, write_instance
from .cam import AttentionMatrix, aggregate_attention, compute_cam, upsample_bilinear
from .coneighbor import RefinedAttention, refine, similarity
from .diffusion import DiffusionConfig, ad_cam, diffuse
from .evaluation import EvalReport, confusion, miou, seed_mask, sweep_threshold
from .randomwalk import build_transition, rw_refine

__all__ = [
    "AttentionMatrix",
    "DiffusionConfig",
    "EvalReport",
    "RefinedAttention",
    "ad_cam",
    "aggregate_attention",
    "build_transition",
    "compute_cam",
    "confusion",
    "diffuse",
    "load_instance",
    "miou",
    "read_array",
    "refine",
    "rw_refine",
    "seed_mask",
    "similarity",
    "sweep_threshold",
    "upsample_bilinear",
    "write_array",
    "write_instance",
]
