"""``camdiffuse`` command-line entry point.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .arrayio import find_instances, load_instance, read_array, write_array
from .cam import upsample_bilinear
from .coneighbor import save_refined
from .diffusion import DEFAULT_K, DEFAULT_STEPS, prepare_attention
from .errors import InputError
from .evaluation import (
    best_report,
    default_thresholds,
    parse_thresholds,
    report_to_dict,
    reports_to_csv,
    sweep_threshold,
)
from .pipeline import RandomWalk, class_maps, load_sample, pool_map, sensitivity_sweep
from .plot import sensitivity_svg
from .randomwalk import DEFAULT_BETA, DEFAULT_RW_STEPS, build_transition, rw_refine
from .synth import SynthSpec, gen_dataset

log = logging.getLogger("camdiffuse")


class UsageError(InputError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    return {"camdiffuse": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _load_samples(inputs, workers):
    if not inputs:
        raise UsageError("no input manifests given")
    manifests = find_instances(inputs)
    instances = [load_instance(m) for m in manifests]
    names = [inst.name for inst in instances]
    if len(set(names)) != len(names):
        raise UsageError("instance directory names must be unique")
    return pool_map(load_sample, instances, workers)


def _write_metadata(out: Path, command: str, config: dict, workers: int, timings: dict) -> None:
    # run.json is fully determined by inputs and flags; execution details go to a sidecar
    _dump_json(out / "run.json", {"command": command, "config": config, "versions": _versions()})
    _dump_json(out / "execution.json", {"workers": workers, "timings_s": {k: round(v, 6) for k, v in timings.items()}})


def _write_maps(out: Path, name: str, maps: dict) -> None:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    for c, m in sorted(maps.items()):
        write_array(d / f"class_{c}.npy", np.asarray(m, dtype=np.float32))


def _read_maps(pred_dir: Path, sample) -> dict:
    maps = {}
    for c in sample.labels:
        path = pred_dir / sample.name / f"class_{c}.npy"
        if not path.is_file():
            raise UsageError(f"no prediction for {sample.name} class {c} (expected {path})")
        arr = read_array(path)
        if arr.ndim != 2:
            raise UsageError(f"{path}: prediction must be 2-d")
        maps[c] = arr.astype(np.float64)
    return maps


def _rw_config(args, samples):
    if args.boundary is None:
        return None, None
    rw = RandomWalk(args.rw_steps, args.beta)
    if args.boundary == "manifest":
        missing = [s.name for s in samples if s.boundary is None]
        if missing:
            raise UsageError(f"instances without a boundary map: {missing}")
        return rw, None
    if len(samples) != 1:
        raise UsageError("--boundary PATH needs exactly one input manifest; use --boundary manifest otherwise")
    return rw, read_array(args.boundary)


def cmd_maps(args, method: str) -> None:
    t0 = time.perf_counter()
    samples = _load_samples(args.inputs, args.workers)
    rw, boundary = _rw_config(args, samples) if method != "cam" else (None, None)
    t1 = time.perf_counter()
    results = pool_map(lambda s: class_maps(s, method, args.k, args.steps, rw=rw, boundary=boundary), samples, args.workers)
    t2 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, maps in zip(samples, results):
        _write_maps(out, s.name, maps)
    config = {"method": method, "instances": [s.name for s in samples], "seed": args.seed}
    if method != "cam":
        config.update(k=args.k, steps=args.steps)
    if rw is not None:
        config.update(boundary=str(args.boundary), rw_steps=rw.steps, beta=rw.beta)
    _write_metadata(out, args.command, config, args.workers, {"load": t1 - t0, "compute": t2 - t1, "write": time.perf_counter() - t2})
    log.info("wrote %d instances to %s", len(samples), out)


def cmd_adcam(args) -> None:
    cmd_maps(args, "adcam" if args.refine else "attdiff")


def cmd_cam(args) -> None:
    cmd_maps(args, "cam")


def cmd_refine_att(args) -> None:
    t0 = time.perf_counter()
    samples = _load_samples(args.inputs, args.workers)
    refined = pool_map(lambda s: prepare_attention(s.attention, s.grid).refined(args.k), samples, args.workers)
    t1 = time.perf_counter()
    out = Path(args.out)
    for s, att in zip(samples, refined):
        (out / s.name).mkdir(parents=True, exist_ok=True)
        save_refined(att, out / s.name / "refined", k=args.k)
    config = {"k": args.k, "instances": [s.name for s in samples], "seed": args.seed}
    _write_metadata(out, args.command, config, args.workers, {"compute": t1 - t0})


def cmd_rw_refine(args) -> None:
    samples = _load_samples(args.inputs, args.workers)
    if args.boundary is None:
        args.boundary = "manifest"
    rw, boundary = _rw_config(args, samples)
    pred = Path(args.pred)
    preds = [_read_maps(pred, s) for s in samples]

    def run(item):
        s, maps = item
        b = boundary if boundary is not None else s.boundary
        b = np.asarray(b, dtype=np.float64)
        t = build_transition(b, rw.beta)
        return {c: rw_refine(m, b, t, rw.steps) for c, m in maps.items()}

    t0 = time.perf_counter()
    results = pool_map(run, list(zip(samples, preds)), args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, maps in zip(samples, results):
        _write_maps(out, s.name, maps)
    config = {"instances": [s.name for s in samples], "boundary": str(args.boundary), "rw_steps": rw.steps, "beta": rw.beta, "seed": args.seed}
    _write_metadata(out, args.command, config, args.workers, {"compute": time.perf_counter() - t0})


def _thresholds(args):
    return parse_thresholds(args.thresholds) if args.thresholds else default_thresholds()


def cmd_eval(args) -> None:
    thresholds = _thresholds(args)
    samples = _load_samples(args.inputs, args.workers)
    pred = Path(args.pred)
    for s in samples:
        if s.gt is None:
            raise UsageError(f"{s.name}: manifest has no gt_mask")
    preds = [_read_maps(pred, s) for s in samples]
    names = {s.name for s in samples}
    orphans = sorted(d.name for d in pred.iterdir() if d.is_dir() and d.name not in names and any(d.glob("class_*.npy")))
    if orphans:
        raise UsageError(f"predictions without a manifest: {orphans}")

    def prepare(item):
        s, maps = item
        return [(c + 1, upsample_bilinear(m, s.gt.shape)) for c, m in sorted(maps.items())], s.gt

    t0 = time.perf_counter()
    images = pool_map(prepare, list(zip(samples, preds)), args.workers)
    num_classes = max(s.num_classes for s in samples) + 1
    reports = sweep_threshold(images, thresholds, num_classes)
    best = best_report(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(reports_to_csv(reports))
    _dump_json(out / "best.json", report_to_dict(best))
    config = {"pred": str(args.pred), "instances": [s.name for s in samples], "thresholds": thresholds, "seed": args.seed}
    _write_metadata(out, args.command, config, args.workers, {"compute": time.perf_counter() - t0})
    print(f"best threshold {best.threshold:.2f}: mIoU {best.miou:.4f} FP {best.fp_rate:.4f} FN {best.fn_rate:.4f}")


def cmd_sweep(args) -> None:
    thresholds = _thresholds(args)
    samples = _load_samples(args.inputs, args.workers)
    t0 = time.perf_counter()
    rows = sensitivity_sweep(samples, args.k, args.steps, thresholds, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["k,T,best_threshold,miou,fp_rate,fn_rate"]
    lines += [f"{r.k},{r.steps},{r.best_threshold:.4f},{r.miou:.4f},{r.fp_rate:.4f},{r.fn_rate:.4f}" for r in rows]
    (out / "sensitivity.csv").write_text("\n".join(lines) + "\n")
    if args.plot:
        fixed_k = DEFAULT_K if DEFAULT_K in args.k else args.k[0]
        fixed_t = DEFAULT_STEPS if DEFAULT_STEPS in args.steps else args.steps[0]
        (out / "sensitivity.svg").write_text(sensitivity_svg(rows, fixed_k, fixed_t))
    config = {"k": args.k, "steps": args.steps, "instances": [s.name for s in samples], "thresholds": thresholds, "seed": args.seed}
    _write_metadata(out, args.command, config, args.workers, {"compute": time.perf_counter() - t0})


def cmd_gen_synth(args) -> None:
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.num_images is not None:
        overrides["num_images"] = args.num_images
    if overrides:
        spec = SynthSpec.from_dict({**spec.to_dict(), **overrides})
    paths = gen_dataset(spec, args.out)
    log.info("generated %d instances in %s", len(paths), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camdiffuse", description="Attention-diffused class activation maps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--workers", type=_positive_int, default=1, help="worker threads (default 1)")
        p.add_argument("--seed", type=int, default=None, help="recorded in run metadata; used by gen-synth")

    def inputs(p):
        p.add_argument("inputs", nargs="*", help="instance.json files, instance dirs or dataset dirs")

    def rw_flags(p):
        p.add_argument("--boundary", help="boundary .npy (single input) or 'manifest' to use each manifest's map")
        p.add_argument("--rw-steps", type=_positive_int, default=DEFAULT_RW_STEPS)
        p.add_argument("--beta", type=float, default=DEFAULT_BETA)

    p = sub.add_parser("adcam", help="attention-diffused CAM per labeled class")
    inputs(p)
    common(p)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.add_argument("--steps", type=_positive_int, default=DEFAULT_STEPS)
    p.add_argument("--no-refine", dest="refine", action="store_false", help="diffuse with unrefined attention")
    rw_flags(p)
    p.set_defaults(func=cmd_adcam)

    p = sub.add_parser("cam", help="vanilla CAM per labeled class")
    inputs(p)
    common(p)
    p.set_defaults(func=cmd_cam, k=None, steps=None)

    p = sub.add_parser("refine-att", help="write the refined sparse attention (CSR)")
    inputs(p)
    common(p)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.set_defaults(func=cmd_refine_att)

    p = sub.add_parser("rw-refine", help="boundary-gated random walk over predicted maps")
    inputs(p)
    common(p)
    p.add_argument("--pred", required=True, help="directory of <instance>/class_<c>.npy maps")
    rw_flags(p)
    p.set_defaults(func=cmd_rw_refine)

    p = sub.add_parser("eval", help="threshold sweep against ground truth")
    inputs(p)
    common(p)
    p.add_argument("--pred", required=True, help="directory of <instance>/class_<c>.npy maps")
    p.add_argument("--thresholds", help="lo:hi:step (default 0.01:0.99:0.01)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sensitivity over k and T")
    inputs(p)
    common(p)
    p.add_argument("--k", type=_int_list, default=[DEFAULT_K], help="comma-separated k values")
    p.add_argument("--steps", type=_int_list, default=[DEFAULT_STEPS], help="comma-separated T values")
    p.add_argument("--thresholds", help="lo:hi:step (default 0.01:0.99:0.01)")
    p.add_argument("--plot", action="store_true", help="also write sensitivity.svg")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--spec", help="synth spec JSON (defaults used when omitted)")
    p.add_argument("--num-images", type=_positive_int)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CAMDIFFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 for --help/--version
        return exc.code if isinstance(exc.code, int) else 0
    try:
        args.func(args)
    except InputError as exc:
        print(f"camdiffuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        log.exception("internal error")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
