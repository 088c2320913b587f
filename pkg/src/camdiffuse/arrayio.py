"""NPY v1.0 reading/writing and the per-image ``instance.json`` manifest.

Only little-endian, C-ordered float32 and uint8 arrays pass the default
gate. Anything else is rejected rather than converted so that exporter bugs
surface here instead of as silent precision changes downstream.
"""

from __future__ import annotations

import ast
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidShape,
    IoFailure,
    MalformedHeader,
    ManifestError,
    TruncatedData,
    UnsupportedDtype,
)

MAGIC = b"\x93NUMPY"
VERSION = (1, 0)
ALIGN = 64

# descr string <-> dtype for everything this package may ever store
_DESCRS = {
    "<f4": np.dtype("<f4"),
    "|u1": np.dtype("u1"),
    "<u4": np.dtype("<u4"),
}
DEFAULT_DTYPES = frozenset({np.dtype("<f4"), np.dtype("u1")})
INDEX_DTYPES = frozenset({np.dtype("<u4")})


def _descr(dtype: np.dtype) -> str:
    for descr, dt in _DESCRS.items():
        if dt == dtype:
            return descr
    raise UnsupportedDtype(f"dtype {dtype} is not supported")


def _header_bytes(descr: str, shape: tuple[int, ...]) -> bytes:
    if len(shape) == 1:
        shape_repr = f"({shape[0]},)"
    else:
        shape_repr = "(" + ", ".join(str(d) for d in shape) + ")"
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_repr}, }}"
    # magic(6) + version(2) + length(2) + text + padding + '\n' is a multiple of 64
    unpadded = len(MAGIC) + 4 + len(text) + 1
    text += " " * (-unpadded % ALIGN) + "\n"
    return text.encode("latin1")


def write_array(path, arr, allowed=DEFAULT_DTYPES) -> None:
    """Write ``arr`` to ``path`` as an NPY v1.0 file.

    The array must already have an allowed dtype; no casting is done.
    """
    arr = np.asarray(arr)
    if arr.ndim == 0:
        raise InvalidShape("scalar (empty-shape) arrays are not storable")
    if arr.dtype not in allowed:
        raise UnsupportedDtype(f"refusing to write dtype {arr.dtype}")
    descr = _descr(arr.dtype)
    header = _header_bytes(descr, tuple(int(d) for d in arr.shape))
    payload = np.ascontiguousarray(arr).astype(_DESCRS[descr], copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes(VERSION))
            fh.write(struct.pack("<H", len(header)))
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _parse_header(raw: bytes, path) -> tuple[np.dtype, tuple[int, ...]]:
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (SyntaxError, ValueError) as exc:
        raise MalformedHeader(f"{path}: unparsable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeader(f"{path}: header must have exactly descr/fortran_order/shape")
    if header["fortran_order"] is not False:
        raise MalformedHeader(f"{path}: Fortran-ordered arrays are not supported")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise MalformedHeader(f"{path}: bad shape {shape!r}")
    if len(shape) == 0:
        raise InvalidShape(f"{path}: scalar arrays are not supported")
    descr = header["descr"]
    if not isinstance(descr, str) or descr not in _DESCRS:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} is not supported")
    return _DESCRS[descr], shape


def read_array(path, allowed=DEFAULT_DTYPES) -> np.ndarray:
    """Read an NPY v1.0 file, validating magic, version, dtype and length."""
    try:
        with open(path, "rb") as fh:
            prefix = fh.read(len(MAGIC) + 4)
            if len(prefix) < len(MAGIC) + 4 or prefix[: len(MAGIC)] != MAGIC:
                raise MalformedHeader(f"{path}: missing NPY magic")
            if tuple(prefix[6:8]) != VERSION:
                raise MalformedHeader(f"{path}: unsupported NPY version {tuple(prefix[6:8])}")
            (hlen,) = struct.unpack("<H", prefix[8:10])
            raw = fh.read(hlen)
            if len(raw) != hlen:
                raise MalformedHeader(f"{path}: header truncated")
            dtype, shape = _parse_header(raw, path)
            if dtype not in allowed:
                raise UnsupportedDtype(f"{path}: dtype {dtype} not allowed here")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = fh.read(nbytes)
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(payload) != nbytes:
        raise TruncatedData(f"{path}: expected {nbytes} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


@dataclass
class Instance:
    """One image's worth of exported tensors, as described by ``instance.json``."""

    root: Path
    attention: str
    features: str
    weights: str
    labels: list[int]
    boundary: str | None = None
    gt_mask: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.root.name

    def _load(self, rel, ndim, dtype=np.float32):
        arr = read_array(self.root / rel)
        if arr.ndim != ndim:
            raise ManifestError(f"{self.root / rel}: expected {ndim}-d array, got shape {arr.shape}")
        if arr.dtype != dtype:
            raise ManifestError(f"{self.root / rel}: expected {np.dtype(dtype)}, got {arr.dtype}")
        return arr

    def load_attention(self) -> np.ndarray:
        return self._load(self.attention, 4)

    def load_features(self) -> np.ndarray:
        return self._load(self.features, 3)

    def load_weights(self) -> np.ndarray:
        return self._load(self.weights, 2)

    def load_boundary(self) -> np.ndarray | None:
        return None if self.boundary is None else self._load(self.boundary, 2)

    def load_gt(self) -> np.ndarray | None:
        return None if self.gt_mask is None else self._load(self.gt_mask, 2, np.uint8)


MANIFEST_NAME = "instance.json"
_REQUIRED = ("attention", "features", "weights", "labels")
_OPTIONAL = ("boundary", "gt_mask")


def load_instance(path) -> Instance:
    """Load a manifest from an ``instance.json`` path or the directory holding it."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"{path}: manifest not found") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ManifestError(f"{path}: missing keys {missing}")
    labels = doc["labels"]
    if not isinstance(labels, list) or not all(isinstance(c, int) and c >= 0 for c in labels):
        raise ManifestError(f"{path}: labels must be a list of non-negative ints")
    extra = {k: v for k, v in doc.items() if k not in _REQUIRED + _OPTIONAL}
    return Instance(
        root=path.parent,
        attention=doc["attention"],
        features=doc["features"],
        weights=doc["weights"],
        labels=list(labels),
        boundary=doc.get("boundary"),
        gt_mask=doc.get("gt_mask"),
        extra=extra,
    )


def write_instance(root, *, attention, features, weights, labels, boundary=None, gt_mask=None, extra=None) -> Path:
    """Write arrays plus ``instance.json`` into ``root`` and return the manifest path."""
    root = Path(root)
    os.makedirs(root, exist_ok=True)
    doc = {}
    for key, arr, dtype in (
        ("attention", attention, np.float32),
        ("features", features, np.float32),
        ("weights", weights, np.float32),
        ("boundary", boundary, np.float32),
        ("gt_mask", gt_mask, np.uint8),
    ):
        if arr is None:
            continue
        write_array(root / f"{key}.npy", np.asarray(arr, dtype=dtype))
        doc[key] = f"{key}.npy"
    doc["labels"] = [int(c) for c in labels]
    if extra:
        doc.update(extra)
    manifest = root / MANIFEST_NAME
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest


def find_instances(paths) -> list[Path]:
    """Expand CLI inputs into a sorted, de-duplicated list of manifest paths.

    Each input may be an ``instance.json`` file, a directory containing one,
    or a dataset directory whose immediate subdirectories contain one.
    """
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif (p / MANIFEST_NAME).is_file():
            found.append(p / MANIFEST_NAME)
        elif p.is_dir():
            subs = sorted(d / MANIFEST_NAME for d in p.iterdir() if (d / MANIFEST_NAME).is_file())
            if not subs:
                raise ManifestError(f"{p}: no instance manifests found")
            found.extend(subs)
        else:
            raise ManifestError(f"{p}: no such manifest or directory")
    seen, out = set(), []
    for f in found:
        key = f.resolve()
        if key not in seen:
            seen.add(key)
            out.append(f)
    return out
