"""Per-image pipelines and dataset-level sweeps built from the core modules."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .arrayio import Instance
from .cam import compute_cam, upsample_bilinear
from .coneighbor import RefinedAttention
from .diffusion import (
    DEFAULT_K,
    DEFAULT_STEPS,
    DiffusionConfig,
    PreparedAttention,
    diffuse,
    prepare_attention,
)
from .errors import InputError
from .evaluation import best_report, default_thresholds, sweep_threshold
from .randomwalk import build_transition, rw_refine

METHODS = ("cam", "adcam", "attdiff")


@dataclass
class Sample:
    name: str
    features: np.ndarray
    weights: np.ndarray
    attention: np.ndarray
    labels: list[int]
    gt: np.ndarray | None = None
    boundary: np.ndarray | None = None

    @property
    def grid(self) -> tuple[int, int]:
        return tuple(self.features.shape[1:])

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def load_sample(inst: Instance) -> Sample:
    return Sample(
        name=inst.name,
        features=inst.load_features(),
        weights=inst.load_weights(),
        attention=inst.load_attention(),
        labels=list(inst.labels),
        gt=inst.load_gt(),
        boundary=inst.load_boundary(),
    )


@dataclass(frozen=True)
class RandomWalk:
    steps: int
    beta: float


def class_maps(
    sample: Sample,
    method: str = "adcam",
    k: int = DEFAULT_K,
    steps: int = DEFAULT_STEPS,
    prepared: PreparedAttention | None = None,
    rw: RandomWalk | None = None,
    boundary: np.ndarray | None = None,
) -> dict[int, np.ndarray]:
    """Activation map per labeled class row, at feature-grid resolution.

    ``rw`` turns on boundary-gated random-walk refinement; it needs either an
    explicit ``boundary`` or one stored on the sample.
    """
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    if not sample.labels:
        raise InputError(f"{sample.name}: no labeled classes")
    maps = {c: compute_cam(sample.features, sample.weights, c) for c in sample.labels}
    if method != "cam":
        prepared = prepared or prepare_attention(sample.attention, sample.grid)
        att = prepared.refined(k) if method == "adcam" else prepared.unrefined()
        cfg = DiffusionConfig(steps)
        maps = {c: diffuse(m, att, cfg) for c, m in maps.items()}
    if rw is not None:
        b = boundary if boundary is not None else sample.boundary
        if b is None:
            raise InputError(f"{sample.name}: random-walk refinement needs a boundary map")
        t = build_transition(b, rw.beta)
        maps = {c: rw_refine(m, b, t, rw.steps) for c, m in maps.items()}
    return maps


def eval_inputs(sample: Sample, maps: dict[int, np.ndarray]):
    """(label, upsampled map) pairs plus ground truth, ready for sweep_threshold."""
    if sample.gt is None:
        raise InputError(f"{sample.name}: no ground-truth mask")
    target = sample.gt.shape
    return [(c + 1, upsample_bilinear(m, target)) for c, m in sorted(maps.items())], sample.gt


def pool_map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate_method(samples, method="adcam", k=DEFAULT_K, steps=DEFAULT_STEPS, thresholds=None, rw=None, workers=1):
    """Threshold sweep for one method over a dataset; returns all reports."""
    thresholds = thresholds or default_thresholds()
    num_classes = max(s.num_classes for s in samples) + 1
    inputs = pool_map(lambda s: eval_inputs(s, class_maps(s, method, k, steps, rw=rw)), samples, workers)
    return sweep_threshold(inputs, thresholds, num_classes)


@dataclass
class SensitivityRow:
    k: int
    steps: int
    best_threshold: float
    miou: float
    fp_rate: float
    fn_rate: float


def sensitivity_sweep(samples, k_values, steps_values, thresholds=None, workers=1) -> list[SensitivityRow]:
    """Best-threshold AD-CAM metrics for every (k, T) grid point.

    Aggregated attention and similarity are computed once per image and
    reused across the grid; refinement runs once per (image, k).
    """
    k_values, steps_values = list(k_values), list(steps_values)
    if not k_values or not steps_values:
        raise InputError("k and T grids must be non-empty")
    thresholds = thresholds or default_thresholds()
    num_classes = max(s.num_classes for s in samples) + 1

    def per_image(sample):
        prepared = prepare_attention(sample.attention, sample.grid)
        cams = {c: compute_cam(sample.features, sample.weights, c) for c in sample.labels}
        out = {}
        for k in k_values:
            att: RefinedAttention = prepared.refined(k)
            for t in steps_values:
                maps = {c: diffuse(m, att, DiffusionConfig(t)) for c, m in cams.items()}
                out[k, t] = eval_inputs(sample, maps)
        return out

    per_sample = pool_map(per_image, samples, workers)
    rows = []
    for k in k_values:
        for t in steps_values:
            best = best_report(sweep_threshold([p[k, t] for p in per_sample], thresholds, num_classes))
            rows.append(SensitivityRow(k, t, best.threshold, best.miou, best.fp_rate, best.fn_rate))
    return rows
