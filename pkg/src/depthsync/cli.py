"""Command-line front end.

Subcommands: make-specs, simulate, align, pair, denoise, tune, eval, folds.
Exit codes: 0 ok, 2 invalid input, 3 alignment infeasible, 4 divergence,
1 anything else.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import filters, kernels
from .errors import DepthSyncError, InvalidInputError, ManifestFormatError, WriteError
from .evaluation import error_heatmap, evaluate_dataset
from .geometry import CameraIntrinsics, RigidTransform
from .groundtruth import AlignmentResult, build_paired_dataset, load_alignment, save_alignment
from .sequence_io import (_read_manifest, load_paired_dataset, load_sequence, read_depth_png,
                          save_paired_dataset, save_sequence, write_depth_png, _write_png)
from .simulator import EPOCH_US, OracleProvider, RigSpec, SceneSpec, SensorSpec, load_json_spec, record_pair
from .spatial import ClassicProvider
from .stacking import make_fold_plan, save_fold_plan
from .temporal import find_time_shift

log = logging.getLogger("depthsync")


def _write_json(path, obj):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestFormatError("file not found", Path(path)) from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestFormatError(f"unreadable JSON: {exc}", Path(path)) from exc


def scale_intrinsics(k, s):
    """Resample a pinhole model by ``s`` (pixel centers at integers)."""
    return CameraIntrinsics(k.fx * s, k.fy * s, (k.cx + 0.5) * s - 0.5, (k.cy + 0.5) * s - 0.5,
                            int(round(k.width * s)), int(round(k.height * s)))


def default_rig(scale=1.0):
    """Portrait phone-like LQ at 30 fps next to a landscape ToF-like HQ at 25 fps."""
    k_lq = scale_intrinsics(CameraIntrinsics(500.0, 500.0, 239.5, 319.5, 480, 640), scale)
    k_hq = scale_intrinsics(CameraIntrinsics(365.0, 365.0, 255.5, 211.5, 512, 424), scale)
    lq = SensorSpec(k_lq, fps=30.0, jitter_ms=1.0, noise_mm=6.0, noise_quad=2.0, quant_mm=1.0)
    hq = SensorSpec(k_hq, fps=25.0, jitter_ms=1.0, start_ms=12.0, quant_mm=1.0)
    return RigSpec(lq, hq, RigidTransform.from_axis_angle((0, 1, 0), 5.0, (0.08, 0.0, 0.0)), 23.0)


# -- commands -------------------------------------------------------------------

def cmd_make_specs(args):
    _mkdir(args.out)
    _write_json(Path(args.out) / "scene.json", SceneSpec.default(args.deg_per_s, args.seed).to_dict())
    _write_json(Path(args.out) / "rig.json", default_rig(args.scale).to_dict())


def cmd_simulate(args):
    scene = load_json_spec(args.scene, SceneSpec)
    rig = load_json_spec(args.rig, RigSpec)
    lq, hq, truth, info = record_pair(scene, rig, args.duration, args.seed)
    out = Path(args.out)
    save_sequence(lq, out / "lq")
    save_sequence(hq, out / "hq")
    doc = {"delta_ms": rig.delta_ms, "extrinsic": rig.extrinsic.to_dict(), "seed": args.seed,
           "duration_s": args.duration, "mapping": truth.mapping.to_list(), **info}
    _write_json(out / "truth.json", doc)
    log.info("wrote %d LQ and %d HQ frames to %s", len(lq), len(hq), out)


def _provider(args):
    if args.provider == "classic":
        return ClassicProvider()
    if not (args.scene and args.truth):
        raise InvalidInputError("--provider oracle needs --scene and --truth")
    scene = load_json_spec(args.scene, SceneSpec)
    truth = _read_json(args.truth)
    try:
        return OracleProvider(scene, RigidTransform.from_dict(truth["extrinsic"]), float(truth["delta_ms"]),
                              int(truth.get("epoch_us", EPOCH_US)), args.oracle_outliers, args.seed)
    except KeyError as exc:
        raise ManifestFormatError(f"missing key {exc}", Path(args.truth)) from exc


def cmd_align(args):
    lq = load_sequence(args.lq_dir)
    hq = load_sequence(args.hq_dir)
    provider = _provider(args)
    res = find_time_shift(lq, hq, provider, args.range_ms, args.step_ms, args.max_gap_ms, threads=args.threads,
                          coarse_to_fine=args.coarse_to_fine, passes=args.passes, huber_px=args.huber_px,
                          min_corr=args.min_corr)
    log.info("evaluated %d shift candidates; best %+.1f ms (residual %.4g px)",
             len(res.candidates), res.delta_ms, res.residual)
    a = AlignmentResult(res.delta_ms, res.transform, res.mapping, res.residual)
    rep = res.report
    extra = {
        "retained_pairs": len(res.mapping.within(args.max_gap_ms)),
        "max_gap_ms": args.max_gap_ms,
        "diagnostics": {"pass_losses": rep.pass_losses, "correspondence_counts": rep.correspondence_counts,
                        "converged": rep.converged, "iterations": len(rep.losses), "dropped_terms": rep.n_dropped},
        "candidates": [{"delta_ms": c.delta_ms, "residual_px": c.residual if np.isfinite(c.residual) else None,
                        "pairs": c.n_pairs, "correspondences": c.n_correspondences, "error": c.error}
                       for c in res.candidates],
    }
    save_alignment(a, args.out, extra)


def cmd_pair(args):
    lq = load_sequence(args.lq_dir)
    hq = load_sequence(args.hq_dir)
    a = load_alignment(args.alignment)
    ds = build_paired_dataset(lq, hq, a, args.max_gap_ms, threads=args.threads)
    save_paired_dataset(ds, args.out)
    log.info("wrote %d paired records to %s", len(ds), args.out)


def _params(args):
    return filters.FilterParams(args.sigma_space, args.sigma_range, args.radius, args.iters)


def cmd_denoise(args):
    ds = load_paired_dataset(args.paired_dir)
    den = filters.FilterDenoiser(args.filter, _params(args))
    preds = [den(r.lq_frame) for r in ds.records]
    save_predictions(preds, ds, args.out, {"filter": args.filter, "params": vars(den.params)})


def save_predictions(preds, ds, out, meta):
    out = Path(out)
    _mkdir(out / "depth")
    recs = []
    for n, (p, r) in enumerate(zip(preds, ds.records)):
        name = f"depth/{n:06d}.png"
        write_depth_png(out / name, p)
        recs.append({"index": n, "lq_index": r.lq_index, "depth": name})
    _write_json(out / "manifest.json", {"kind": "predictions", **meta, "records": recs})


def load_predictions(path, ds):
    path = Path(path)
    m = _read_manifest(path)
    if m.get("kind") != "predictions":
        raise ManifestFormatError("not a predictions manifest", path / "manifest.json")
    recs = m.get("records", [])
    if len(recs) != len(ds.records):
        raise InvalidInputError(f"{path}: {len(recs)} predictions for {len(ds.records)} records")
    return [read_depth_png(path / r["depth"]) for r in recs]


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"bad number list {text!r}") from exc


def cmd_tune(args):
    ds = load_paired_dataset(args.paired_dir)
    grid = filters.expand_grid(_floats(args.sigma_space), _floats(args.sigma_range),
                               [int(r) for r in _floats(args.radius)] if args.radius else [None],
                               [int(i) for i in _floats(args.iters)])
    best, table = filters.tune_params(args.filter, ds, grid, use_seg=not args.no_seg)
    _write_json(args.out, {"filter": args.filter, "best": vars(best),
                           "grid": [{**vars(p), "mse_mm2": mse} for p, mse in table]})
    log.info("best %s params %s", args.filter, best)


def cmd_eval(args):
    ds = load_paired_dataset(args.paired_dir)
    if args.pred:
        preds = load_predictions(args.pred, ds)
    else:
        preds = [r.lq_frame.depth for r in ds.records]
    rows, summary = evaluate_dataset(preds, ds, use_seg=not args.no_seg)
    summary["source"] = "predictions" if args.pred else "raw"
    out = Path(args.out)
    _mkdir(out)
    try:
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["index"])
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise WriteError(f"{out / 'metrics.csv'}: {exc}") from exc
    _write_json(out / "summary.json", summary)
    if args.heatmap:
        _mkdir(out / "heatmap")
        for n, (p, r) in enumerate(zip(preds, ds.records)):
            seg = None if args.no_seg else r.lq_frame.mask
            _write_png(out / "heatmap" / f"{n:06d}.png", error_heatmap(p, r.depth, r.mask, seg, args.heatmap_mm))
    print(json.dumps(summary))


def cmd_folds(args):
    ids = list(args.ids)
    if args.from_dir:
        ids += sorted(p.name for p in Path(args.from_dir).iterdir() if p.is_dir())
    plan = make_fold_plan(ids, args.test_fraction, args.seed, args.n_test)
    save_fold_plan(plan, args.out)


# -- parser ---------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="depthsync", description=__doc__.split("\n")[0])
    ap.add_argument("--json-errors", action="store_true", help="report errors as JSON lines on stderr")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--backend", choices=kernels.available_backends(), default=None,
                    help="kernel implementation (default: compiled if built)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-specs", help="write default scene.json and rig.json")
    p.add_argument("--out", required=True)
    p.add_argument("--deg-per-s", type=float, default=90.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="resolution factor for both cameras")
    p.set_defaults(func=cmd_make_specs)

    p = sub.add_parser("simulate", help="render a synthetic LQ/HQ recording")
    p.add_argument("scene")
    p.add_argument("rig")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="estimate clock offset and extrinsic")
    p.add_argument("lq_dir")
    p.add_argument("hq_dir")
    p.add_argument("--range-ms", type=float, default=60.0)
    p.add_argument("--step-ms", type=float, default=5.0)
    p.add_argument("--max-gap-ms", type=float, default=15.0)
    p.add_argument("--provider", choices=("oracle", "classic"), default="classic")
    p.add_argument("--scene", help="scene spec (oracle provider)")
    p.add_argument("--truth", help="simulator truth.json (oracle provider)")
    p.add_argument("--oracle-outliers", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--passes", type=int, default=10)
    p.add_argument("--huber-px", type=float, default=None)
    p.add_argument("--min-corr", type=int, default=50)
    p.add_argument("--coarse-to-fine", action="store_true")
    p.add_argument("--out", default="alignment.json")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("pair", help="build the reprojected ground-truth dataset")
    p.add_argument("lq_dir")
    p.add_argument("hq_dir")
    p.add_argument("alignment")
    p.add_argument("--max-gap-ms", type=float, default=15.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("denoise", help="run a filter over a paired dataset's LQ depth")
    p.add_argument("paired_dir")
    p.add_argument("--filter", choices=filters.FILTERS, required=True)
    p.add_argument("--sigma-space", type=float, default=2.0)
    p.add_argument("--sigma-range", type=float, default=0.03)
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--iters", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("tune", help="grid-search filter parameters against ground truth")
    p.add_argument("paired_dir")
    p.add_argument("--filter", choices=filters.FILTERS, required=True)
    p.add_argument("--sigma-space", default="1,2,3", help="comma-separated values")
    p.add_argument("--sigma-range", default="0.01,0.02,0.04,0.08")
    p.add_argument("--radius", default="")
    p.add_argument("--iters", default="4")
    p.add_argument("--no-seg", action="store_true", help="ignore segmentation masks")
    p.add_argument("--out", default="params.json")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="masked MSE / L1 against ground truth")
    p.add_argument("paired_dir")
    p.add_argument("--pred", help="predictions directory (default: raw LQ depth)")
    p.add_argument("--no-seg", action="store_true")
    p.add_argument("--heatmap", action="store_true", help="also write per-frame error images")
    p.add_argument("--heatmap-mm", type=float, default=100.0, help="error mapped to white")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("folds", help="out-of-fold split into P1 / P2 / P_test")
    p.add_argument("ids", nargs="*")
    p.add_argument("--from-dir", help="use subdirectory names as sequence ids")
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="folds.json")
    p.set_defaults(func=cmd_folds)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        args.threads = 1
    previous = kernels.set_backend(args.backend) if args.backend else None
    try:
        args.func(args)
    except DepthSyncError as exc:
        _report(args, exc, exc.exit_code)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - top-level guard
        _report(args, exc, 1)
        return 1
    finally:
        if previous is not None:
            kernels.set_backend(previous)
    return 0


def _report(args, exc, code):
    if args.json_errors:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"depthsync {args.command}: error: {exc}\n")
