import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from camdiffuse.arrayio import read_array, write_array
from camdiffuse.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def adcam_out(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("adcam")
    assert run("adcam", small_dataset, "--out", out, "--k", 20) == 0
    return out


def test_no_inputs_is_usage_error(tmp_path, capsys):
    assert run("adcam", "--out", tmp_path / "x") == 2
    assert not (tmp_path / "x").exists()
    assert "no input manifests" in capsys.readouterr().err


def test_bad_flags_exit_2(small_dataset, tmp_path):
    assert run("adcam", small_dataset, "--out", tmp_path / "x", "--k", 0) == 2
    assert run("sweep", small_dataset, "--out", tmp_path / "x", "--k", "5,a") == 2
    assert run("frobnicate") == 2
    assert run("adcam", small_dataset, "--out", tmp_path / "x", "--k", 10_000) == 2
    assert run("--version") == 0


def test_adcam_outputs_match_grid(small_dataset, adcam_out):
    run_doc = json.loads((adcam_out / "run.json").read_text())
    assert run_doc["command"] == "adcam" and run_doc["config"]["k"] == 20
    assert "workers" not in json.dumps(run_doc)
    for name in run_doc["config"]["instances"]:
        manifest = json.loads((small_dataset / name / "instance.json").read_text())
        grid = read_array(small_dataset / name / "features.npy").shape[1:]
        maps = sorted((adcam_out / name).glob("class_*.npy"))
        assert [p.stem for p in maps] == [f"class_{c}" for c in manifest["labels"]]
        for p in maps:
            m = read_array(p)
            assert m.shape == grid and m.min() >= 0 and m.max() <= 1


def test_eval_perfect_prediction(small_dataset, tmp_path, capsys):
    pred = tmp_path / "pred"
    for inst in sorted(small_dataset.glob("img_*")):
        gt = read_array(inst / "gt_mask.npy")
        labels = json.loads((inst / "instance.json").read_text())["labels"]
        for c in labels:
            (pred / inst.name).mkdir(parents=True, exist_ok=True)
            write_array(pred / inst.name / f"class_{c}.npy", (gt == c + 1).astype(np.float32))
    assert run("eval", small_dataset, "--pred", pred, "--out", tmp_path / "ev") == 0
    best = json.loads((tmp_path / "ev" / "best.json").read_text())
    assert best["miou"] == 1.0
    assert "mIoU 1.0000" in capsys.readouterr().out


def test_eval_unpaired_exit_2(small_dataset, adcam_out, tmp_path):
    first = sorted(small_dataset.glob("img_*"))[0]
    assert run("eval", first, "--pred", adcam_out, "--out", tmp_path / "ev") == 2
    assert run("eval", small_dataset, "--pred", tmp_path / "nothing", "--out", tmp_path / "ev") == 2
    assert not (tmp_path / "ev").exists()


def test_eval_writes_csv(small_dataset, adcam_out, tmp_path):
    assert run("eval", small_dataset, "--pred", adcam_out, "--out", tmp_path / "ev", "--thresholds", "0.1:0.9:0.1") == 0
    rows = list(csv.DictReader((tmp_path / "ev" / "eval.csv").open()))
    assert [r["threshold"] for r in rows] == [f"{0.1 * i:.4f}" for i in range(1, 10)]


def test_sweep_single_point_and_plot(small_dataset, tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", small_dataset, "--out", out, "--k", 50, "--steps", 2, "--plot") == 0
    rows = list(csv.DictReader((out / "sensitivity.csv").open()))
    assert len(rows) == 1 and rows[0]["k"] == "50" and rows[0]["T"] == "2"
    assert 0 <= float(rows[0]["miou"]) <= 1
    assert (out / "sensitivity.svg").read_text().startswith("<svg")


def test_refine_att_and_rw_refine(small_dataset, adcam_out, tmp_path):
    assert run("refine-att", small_dataset, "--out", tmp_path / "ra", "--k", 8) == 0
    meta = sorted((tmp_path / "ra").glob("*/refined.json"))
    assert len(meta) == 4 and json.loads(meta[0].read_text())["k"] == 8
    assert run("rw-refine", small_dataset, "--pred", adcam_out, "--out", tmp_path / "rw", "--rw-steps", 4) == 0
    assert sorted((tmp_path / "rw").glob("*/class_*.npy"))


def test_adcam_with_boundary_and_ablation(small_dataset, tmp_path):
    assert run("adcam", small_dataset, "--out", tmp_path / "a", "--k", 20, "--boundary", "manifest") == 0
    assert run("adcam", small_dataset, "--out", tmp_path / "b", "--no-refine") == 0
    assert json.loads((tmp_path / "b" / "run.json").read_text())["config"]["method"] == "attdiff"
    # an explicit boundary file only makes sense for one image
    write_array(tmp_path / "b.npy", np.zeros((24, 24), dtype=np.float32))
    assert run("adcam", small_dataset, "--out", tmp_path / "c", "--boundary", tmp_path / "b.npy") == 2


def test_gen_synth_spec_file(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"grid": [8, 8], "num_images": 3}))
    assert run("gen-synth", "--out", tmp_path / "ds", "--spec", tmp_path / "spec.json", "--num-images", 2, "--seed", 5) == 0
    assert len(list((tmp_path / "ds").glob("img_*/instance.json"))) == 2
    assert json.loads((tmp_path / "ds" / "synth_spec.json").read_text())["seed"] == 5
    (tmp_path / "bad.json").write_text(json.dumps({"grid": [8, 8], "colour": 1}))
    assert run("gen-synth", "--out", tmp_path / "ds2", "--spec", tmp_path / "bad.json") == 2


def test_module_entry_and_log_env(small_dataset, tmp_path):
    env = dict(os.environ, CAMDIFFUSE_LOG="info")
    proc = subprocess.run(
        [sys.executable, "-m", "camdiffuse", "cam", str(small_dataset), "--out", str(tmp_path / "c")],
        env=env,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "INFO camdiffuse: wrote 4 instances" in proc.stderr
