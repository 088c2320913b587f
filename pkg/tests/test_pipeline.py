import numpy as np
import pytest

from camdiffuse import coneighbor
from camdiffuse.arrayio import find_instances, load_instance
from camdiffuse.errors import InputError
from camdiffuse.pipeline import (
    RandomWalk,
    Sample,
    class_maps,
    load_sample,
    sensitivity_sweep,
)
from camdiffuse.synth import SynthSpec, make_instance


@pytest.fixture(scope="module")
def family():
    spec = SynthSpec(num_images=20, seed=0)
    out = []
    for i in range(spec.num_images):
        d = make_instance(spec, i)
        out.append(Sample(f"img{i}", d["features"], d["weights"], d["attention"], d["labels"], d["gt_mask"], d["boundary"]))
    return out


def test_fp_grows_with_diffusion_steps(family):
    rows = sensitivity_sweep(family, [50], [2, 4, 6, 8])
    fp = [r.fp_rate for r in rows]
    assert fp == sorted(fp)


def test_fn_shrinks_with_k(family):
    rows = sensitivity_sweep(family, [1, 5, 20, 50, 100], [2])
    fn = [r.fn_rate for r in rows]
    assert fn == sorted(fn, reverse=True)


def test_sweep_refines_once_per_image_and_k(family, monkeypatch):
    calls = []
    real = coneighbor.refine
    monkeypatch.setattr(coneighbor, "refine", lambda *a, **kw: calls.append(a[2]) or real(*a, **kw))
    rows = sensitivity_sweep(family[:3], [5, 20], [1, 2, 3], thresholds=[0.3, 0.5])
    assert len(rows) == 6
    assert sorted(calls) == [5] * 3 + [20] * 3


def test_sweep_worker_count_does_not_matter(family):
    a = sensitivity_sweep(family[:4], [10], [2], workers=1)
    b = sensitivity_sweep(family[:4], [10], [2], workers=3)
    assert a == b


def test_class_maps_methods(small_dataset):
    sample = load_sample(load_instance(find_instances([small_dataset])[0]))
    for method in ("cam", "adcam", "attdiff"):
        maps = class_maps(sample, method, k=30)
        assert sorted(maps) == sample.labels
        assert all(m.shape == sample.grid for m in maps.values())
    refined = class_maps(sample, "adcam", k=30, rw=RandomWalk(4, 8.0))
    assert all(np.isclose(m.max(), 1.0) or not m.any() for m in refined.values())
    with pytest.raises(InputError):
        class_maps(sample, "gradcam")
    no_boundary = Sample(sample.name, sample.features, sample.weights, sample.attention, sample.labels)
    with pytest.raises(InputError):
        class_maps(no_boundary, "adcam", k=30, rw=RandomWalk(4, 8.0))
