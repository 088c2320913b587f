"""Synthetic instances with known structure, and scalar-loop reference oracles.

Each synthetic image is a grid of background plus a few disc-shaped objects.
It models three things:

* class evidence (features) that peaks on only part of each object, so a
  vanilla CAM under-covers it;
* attention that is Gaussian-local inside each region (object or
  background) and never crosses a region border on its own;
* at rate ``rho``, spurious long-range attention between each object and a
  background "context" patch elsewhere in the image (object rows send
  ``rho`` of their mass to the patch, patch rows send ``rho * backlink``
  back). These spurious links are what the co-neighbor filter should remove.

Randomness comes only from ``numpy.random.Generator(PCG64)`` seeded with
``SeedSequence([seed, index])``, so every instance is reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import operator
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import write_instance
from .errors import InputError, OracleSizeExceeded

ORACLE_MAX_N = 64


@dataclass(frozen=True)
class SynthSpec:
    grid: tuple[int, int] = (24, 24)
    num_classes: int = 3
    blob_count: tuple[int, int] = (1, 3)
    radius: tuple[float, float] = (3.0, 5.5)
    sigma: float = 3.0
    rho: float = 0.15
    backlink: float = 1.0
    border_leak: float = 1.0
    patch_radius: tuple[float, float] = (2.0, 3.0)
    layers: int = 2
    heads: int = 3
    head_noise: float = 0.3
    core_sharpness: float = 4.0
    noise_channels: int = 4
    feature_noise: float = 0.003
    image_scale: int = 4
    num_images: int = 20
    seed: int = 0

    def __post_init__(self):
        h, w = self.grid
        if h < 1 or w < 1 or self.num_classes < 1 or self.num_images < 1:
            raise InputError("grid, num_classes and num_images must be positive")
        if not 0 <= self.rho < 1 or self.sigma <= 0 or self.image_scale < 1 or self.core_sharpness <= 0:
            raise InputError("need 0 <= rho < 1, sigma > 0, core_sharpness > 0, image_scale >= 1")
        if not 0 <= self.backlink <= 1 or not 0 <= self.rho * self.border_leak <= 1:
            raise InputError("backlink and rho * border_leak must be in [0, 1]")
        if self.blob_count[0] < 1 or self.blob_count[0] > self.blob_count[1]:
            raise InputError("blob_count must be a non-empty positive range")
        if self.seed < 0 or self.seed >= 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown synth spec keys: {sorted(unknown)}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"{path}: bad synth spec ({exc})") from exc

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Blob:
    cls: int
    cy: float
    cx: float
    r: float
    core_cy: float
    core_cx: float
    core_r: float
    patch: np.ndarray = field(default=None, repr=False)


def instance_rng(spec: SynthSpec, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, index])))


def _region_map(blobs, ys, xs):
    """0 for background, b + 1 for pixels inside blob b (later blobs on top)."""
    region = np.zeros(ys.shape, dtype=np.int64)
    for b, blob in enumerate(blobs):
        region[(ys - blob.cy) ** 2 + (xs - blob.cx) ** 2 <= blob.r**2] = b + 1
    return region


def _local_rows(coords, region, sigma, cross):
    """Gaussian-local attention; pairs in different regions are damped by ``cross``."""
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    same = region[:, None] == region[None, :]
    return np.exp(-d2 / (2 * sigma**2)) * np.where(same, 1.0, cross)


def _normalize_rows(a):
    return a / a.sum(axis=1, keepdims=True)


def make_instance(spec: SynthSpec, index: int = 0) -> dict:
    """Build one instance in memory: attention, features, weights, labels, gt, boundary."""
    rng = instance_rng(spec, index)
    h, w = spec.grid
    n = h * w
    ys, xs = np.divmod(np.arange(n), w)
    ys = ys.astype(np.float64)
    xs = xs.astype(np.float64)
    coords = np.stack([ys, xs], axis=1)

    blobs = []
    for _ in range(int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))):
        r = rng.uniform(*spec.radius)
        cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
        # class evidence covers an off-center sub-disc of the object
        ang = rng.uniform(0, 2 * math.pi)
        off = 0.5 * r
        blobs.append(
            Blob(
                cls=int(rng.integers(spec.num_classes)),
                cy=cy,
                cx=cx,
                r=r,
                core_cy=cy + off * math.sin(ang),
                core_cx=cx + off * math.cos(ang),
                core_r=0.45 * r,
            )
        )
    region = _region_map(blobs, ys, xs)
    blobs = [b for i, b in enumerate(blobs) if (region == i + 1).any()]
    region = _region_map(blobs, ys, xs)

    local = _normalize_rows(_local_rows(coords, region, spec.sigma, spec.rho * spec.border_leak))
    spurious = np.zeros((n, n))
    in_patch = np.zeros(n, dtype=bool)
    background = np.flatnonzero(region == 0)
    for i, blob in enumerate(blobs):
        blob.patch = np.zeros(0, dtype=np.int64)
        if spec.rho == 0 or background.size == 0:
            continue
        members = np.flatnonzero(region == i + 1)
        # context patch: a background disc away from the object
        dist = np.hypot(ys[background] - blob.cy, xs[background] - blob.cx)
        far = background[dist > blob.r + 3] if (dist > blob.r + 3).any() else background
        centre = far[rng.integers(far.size)]
        pr = rng.uniform(*spec.patch_radius)
        near = np.hypot(ys - ys[centre], xs - xs[centre]) <= pr
        blob.patch = np.flatnonzero(near & (region == 0))
        spurious[np.ix_(members, blob.patch)] += 1.0 / blob.patch.size
        spurious[np.ix_(blob.patch, members)] += 1.0 / members.size
        in_patch[blob.patch] = True

    mass = spurious.sum(axis=1)
    weight = np.where(mass > 0, spec.rho * np.where(in_patch, spec.backlink, 1.0), 0.0)
    spur_rows = spurious / np.where(mass > 0, mass, 1.0)[:, None]
    base = (1 - weight)[:, None] * local + weight[:, None] * spur_rows

    support = base > 0
    stack = np.empty((spec.layers, spec.heads, n, n))
    for layer in range(spec.layers):
        for head in range(spec.heads):
            jitter = np.exp(spec.head_noise * rng.standard_normal((n, n)))
            stack[layer, head] = _normalize_rows(np.where(support, base * jitter, 0.0))

    channels = spec.num_classes + spec.noise_channels
    features = spec.feature_noise * rng.standard_normal((channels, h, w))
    for i, blob in enumerate(blobs):
        d2 = (ys - blob.core_cy) ** 2 + (xs - blob.core_cx) ** 2
        bump = np.exp(-0.5 * (d2 / blob.core_r**2) ** (spec.core_sharpness / 2)) * (region == i + 1)
        features[blob.cls] += bump.reshape(h, w)
    features[spec.num_classes :] += rng.standard_normal((spec.noise_channels, h, w))
    weights = np.zeros((spec.num_classes, channels))
    weights[:, : spec.num_classes] = np.eye(spec.num_classes)
    weights[:, spec.num_classes :] = spec.feature_noise * rng.standard_normal((spec.num_classes, spec.noise_channels))

    s = spec.image_scale
    iy, ix = np.divmod(np.arange(h * s * w * s), w * s)
    img_region = _region_map(blobs, (iy + 0.5) / s - 0.5, (ix + 0.5) / s - 0.5)
    class_of = np.array([0] + [b.cls + 1 for b in blobs])
    gt = class_of[img_region].reshape(h * s, w * s).astype(np.uint8)

    grid_region = region.reshape(h, w)
    edge = np.zeros((h, w), dtype=bool)
    edge[1:, :] |= grid_region[1:, :] != grid_region[:-1, :]
    edge[:-1, :] |= grid_region[1:, :] != grid_region[:-1, :]
    edge[:, 1:] |= grid_region[:, 1:] != grid_region[:, :-1]
    edge[:, :-1] |= grid_region[:, 1:] != grid_region[:, :-1]
    boundary = np.where(edge, 0.7, 0.0)

    return {
        "attention": stack.astype(np.float32),
        "features": features.astype(np.float32),
        "weights": weights.astype(np.float32),
        "labels": sorted({b.cls for b in blobs}),
        "gt_mask": gt,
        "boundary": boundary.astype(np.float32),
        "region": grid_region,
        "patches": [b.patch for b in blobs],
    }


def gen_instance(spec: SynthSpec, out_dir, index: int = 0) -> Path:
    """Write one instance as a manifest directory; returns the manifest path."""
    inst = make_instance(spec, index)
    return write_instance(
        out_dir,
        attention=inst["attention"],
        features=inst["features"],
        weights=inst["weights"],
        labels=inst["labels"],
        boundary=inst["boundary"],
        gt_mask=inst["gt_mask"],
        extra={"synth": {"index": index, "seed": spec.seed}},
    )


def gen_dataset(spec: SynthSpec, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [gen_instance(spec, out_dir / f"img_{i:04d}", i) for i in range(spec.num_images)]
    (out_dir / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


# ---------------------------------------------------------------------------
# Reference oracles: direct loop transcriptions, O(n^3), for n <= 64 only.


def _check_oracle_size(n):
    if n > ORACLE_MAX_N:
        raise OracleSizeExceeded(f"oracle limited to n <= {ORACLE_MAX_N}, got {n}")


def dense_oracle_similarity(a) -> list[list[float]]:
    rows = [[float(x) for x in r] for r in np.asarray(a)]
    n = len(rows)
    _check_oracle_size(n)
    s = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            s[i][j] = min(math.fsum(map(math.sqrt, map(operator.mul, rows[i], rows[j]))), 1.0)
    return s


def dense_oracle_refine(a, s, k: int) -> list[list[float]]:
    a = [[float(x) for x in r] for r in np.asarray(a)]
    s = [[float(x) for x in r] for r in np.asarray(s)]
    n = len(a)
    _check_oracle_size(n)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        order = sorted(range(n), key=lambda j: (-s[i][j], j))
        chosen = order[:k]
        total = 0.0
        for j in chosen:
            total += a[i][j]
        if total < 1e-12:
            out[i][i] = 1.0
            continue
        for j in chosen:
            out[i][j] = a[i][j] / total
    return out


def dense_oracle_diffuse(m0, refined, steps: int) -> list[float]:
    """``steps`` explicit products v <- refined^T v on the flattened map."""
    r = [[float(x) for x in row] for row in np.asarray(refined)]
    n = len(r)
    _check_oracle_size(n)
    v = [float(x) for x in np.asarray(m0).reshape(-1)]
    for _ in range(steps):
        nxt = [0.0] * n
        for i in range(n):
            for j in range(n):
                nxt[i] += r[j][i] * v[j]
        v = nxt
    return v


def dense_oracle_pipeline(a, m0, k: int, steps: int) -> list[float]:
    """Similarity, refinement and raw (unnormalized) diffusion composed."""
    s = dense_oracle_similarity(a)
    return dense_oracle_diffuse(m0, dense_oracle_refine(a, s, k), steps)


def dense_oracle_transition(b, beta: float) -> list[list[float]]:
    b = np.asarray(b, dtype=np.float64)
    h, w = b.shape
    n = h * w
    _check_oracle_size(n)
    t = [[0.0] * n for _ in range(n)]
    for y in range(h):
        for x in range(w):
            p = y * w + x
            for qy in range(max(0, y - 1), min(h, y + 2)):
                for qx in range(max(0, x - 1), min(w, x + 2)):
                    q = qy * w + qx
                    t[p][q] = 1.0 if q == p else (1.0 - max(b[y, x], b[qy, qx])) ** beta
            total = sum(t[p])
            t[p] = [v / total for v in t[p]]
    return t


def dense_oracle_rw(m, b, t, steps: int) -> list[float]:
    """T^steps applied to vec(m * (1 - b)), without renormalization."""
    t = [[float(x) for x in row] for row in np.asarray(t)]
    n = len(t)
    _check_oracle_size(n)
    v = [float(mi) * (1.0 - float(bi)) for mi, bi in zip(np.asarray(m).reshape(-1), np.asarray(b).reshape(-1))]
    for _ in range(steps):
        v = [sum(t[i][j] * v[j] for j in range(n)) for i in range(n)]
    return v
