"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 bad input, 3 numeric divergence.
Every command writes the effective configuration next to its results.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import flags_to_csv, frustum_audit, load_intrinsics
from .config import load_config
from .errors import BadValue, CubePoseError, Diverged, EmptyInput, ParseError
from .evaluation import CLASS_HEADER, RECORD_HEADER, evaluate_records
from .geometry import BoundingCube, cube_from_extents, diameter
from .gradcheck import run_gradcheck
from .ingest import MeshModel, class_priors, mesh_cube, parse_ply, read_annotations
from .losses import PoseScaleParams
from .optim import (LossProblem, collapse_experiment, fit_pose, model_swap_experiment,
                    perturb_pose, synthetic_model)
from .report import line_chart, to_csv, to_json

log = logging.getLogger("cubepose")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


class InputError(CubePoseError):
    """Command-line input that cannot be used (bad path, bad selector)."""


def _read_text(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {p}")
    return p.read_text()


def _records(path):
    try:
        return read_annotations(_read_text(path))
    except ParseError as exc:
        exc.args = (f"{path}: {exc}",)
        raise


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(out, name, text):
    (out / name).write_text(text)


def _load_model(path, cfg):
    try:
        mesh = parse_ply(Path(path).read_bytes())
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    return mesh.vertices * cfg.units_to_mm


def load_prior(spec, class_id):
    """Prior cube from a priors JSON file, or inline ``"l,w,h"`` extents in mm."""
    p = Path(spec)
    if p.is_file():
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{p}: invalid JSON: {exc.msg}", exc.lineno) from None
        entries = doc.get("priors", []) if isinstance(doc, dict) else doc
        for e in entries:
            if e.get("class_id") == class_id:
                return BoundingCube(np.asarray(e["cube_mm"], dtype=float))
        raise InputError(f"{p}: no prior for class {class_id!r}")
    try:
        extents = [float(v) for v in spec.split(",")]
    except ValueError:
        raise InputError(f"prior {spec!r} is neither a file nor 'l,w,h' extents") from None
    if len(extents) != 3:
        raise InputError("inline prior needs three extents: l,w,h")
    return cube_from_extents(extents)


# ---------------------------------------------------------------- commands


def cmd_evaluate(args, cfg):
    gt = _records(args.gt)
    pred = _records(args.pred)
    rep = evaluate_records(gt, pred, cfg.k, cfg.eval_dir, cfg.symmetric_classes,
                           cfg.avg_diameter_mm, cfg.echo(), cfg.brute_force_max)
    out = _out_dir(args.out)
    rows = [c.row() for c in rep.classes] + [rep.overall.row()]
    _write(out, "eval.csv", to_csv(CLASS_HEADER, rows))
    _write(out, "records.csv", to_csv(RECORD_HEADER, rep.records))
    doc = {
        "k": rep.k,
        "direction": rep.direction,
        "classes": {c.class_id: dict(zip(CLASS_HEADER[1:], c.row()[1:])) for c in rep.classes},
        "overall": dict(zip(CLASS_HEADER[1:], rep.overall.row()[1:])),
        "config": rep.config,
    }
    _write(out, "report.json", to_json(_json_safe(doc)))
    _write(out, "config.txt", cfg.to_text())
    print(f"evaluated {rep.overall.n_gt} ground truths, {rep.overall.n_pred} predictions: "
          f"accuracy {rep.overall.accuracy:.4f} at k={rep.k}")
    return EXIT_OK


def _json_safe(obj):
    """Replace NaN (not valid JSON) with None."""
    if isinstance(obj, float) and obj != obj:
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_fit(args, cfg):
    records = sorted(_records(args.gt), key=lambda r: (r.image_id, r.class_id))
    if not records:
        raise EmptyInput(f"{args.gt}: no records")
    if not 0 <= args.record < len(records):
        raise InputError(f"--record {args.record} out of range (0..{len(records) - 1})")
    rec = records[args.record]
    prior = load_prior(args.prior, rec.class_id)
    # priors are stored centred; put this one where the object's cube sits
    prior = BoundingCube(prior.vertices - prior.centroid + rec.cube.centroid)
    model = _load_model(args.model, cfg) if args.model else None
    symmetric = rec.symmetric or cfg.is_symmetric(rec.class_id)
    problem = LossProblem(prior, rec.pose, rec.cube, cfg.weights, cfg.loss_dir, symmetric,
                          cfg.offset, model, cfg.eval_dir)
    size = diameter(model if model is not None else rec.cube.vertices)
    if args.init == "gt":
        start = rec.pose
    else:
        rng = np.random.default_rng(cfg.seed)
        start = perturb_pose(rec.pose, rng, size, cfg.init_angle_deg, cfg.init_trans_frac,
                             exact=True)
    init = PoseScaleParams.from_pose(start, cfg.offset)
    trace = fit_pose(init, problem, cfg.fit_config())

    out = _out_dir(args.out)
    _write(out, "trace.csv", to_csv(["iter", "loss_mm", "adds_vs_true"], trace.rows()))
    _write(out, "trace.svg", line_chart(
        {"loss_mm": (trace.iters, trace.losses), "adds_vs_true": (trace.iters, trace.errors)},
        title=f"fit {rec.image_id}/{rec.class_id}", xlabel="iteration", ylabel="mm"))
    final = trace.params
    doc = {
        "image_id": rec.image_id,
        "class_id": rec.class_id,
        "symmetric": symmetric,
        "init": args.init,
        "iterations": len(trace),
        "stop_reason": trace.stop_reason,
        "initial_loss_mm": trace.losses[0],
        "final_loss_mm": trace.final_loss,
        "initial_error_mm": trace.errors[0],
        "final_error_mm": trace.final_error,
        "diameter_mm": size,
        "correct": trace.final_error < cfg.k * size,
        "rotation": [float(v) for v in final.rotation.reshape(-1)],
        "translation_mm": [float(v) for v in final.t],
        "scale": [float(v) for v in final.scale],
        "config": cfg.echo(),
    }
    _write(out, "fit.json", to_json(doc))
    _write(out, "config.txt", cfg.to_text())
    print(f"fit {rec.image_id}/{rec.class_id}: {len(trace)} rows, {trace.stop_reason}, "
          f"ADD(-S) {trace.final_error:.4f} mm (threshold {cfg.k * size:.4f})")
    return EXIT_OK


def cmd_gradcheck(args, cfg, grad_fn=None):
    kwargs = {} if grad_fn is None else {"grad_fn": grad_fn}
    rep = run_gradcheck(cfg.gradcheck_instances, cfg.seed, cfg.gradcheck_h, cfg.gradcheck_tol,
                        cfg.offset, **kwargs)
    status = "PASS" if rep["passed"] else "FAIL"
    print(f"gradcheck {status}: max rel err {rep['max_rel_error']:.3e} over "
          f"{rep['instances']} instances (tol {rep['tol']:g}), "
          f"median fd order {rep['median_order']:.3f}")
    if args.out:
        out = _out_dir(args.out)
        doc = {k: v for k, v in rep.items() if k != "errors"}
        doc["config"] = cfg.echo()
        _write(out, "gradcheck.json", to_json(_json_safe(doc)))
        _write(out, "config.txt", cfg.to_text())
    if not rep["passed"]:
        print("worst instance: " + json.dumps(_json_safe(rep["worst"])))
        return EXIT_CHECK
    return EXIT_OK


def cmd_audit(args, cfg):
    records = _records(args.gt)
    k = load_intrinsics(args.intrinsics)
    flags = frustum_audit(records, k, cfg.min_area_px)
    out = _out_dir(args.out)
    _write(out, "flags.csv", flags_to_csv(flags))
    counts = {}
    for f in flags:
        counts[f.reason.value] = counts.get(f.reason.value, 0) + 1
    counts = {r: counts.get(r, 0) for r in ("BehindCamera", "OutOfFrame", "TinyProjection")}
    doc = {"records": len(records), "flagged": len(flags), "counts": counts,
           "config": cfg.echo()}
    _write(out, "audit.json", to_json(doc))
    _write(out, "config.txt", cfg.to_text())
    print(f"audited {len(records)} records: {len(flags)} flagged "
          + " ".join(f"{r}={n}" for r, n in counts.items()))
    return EXIT_OK


def cmd_prior(args, cfg):
    records = _records(args.gt)
    if not records:
        raise EmptyInput(f"{args.gt}: no records, cannot build a prior")
    override = cfg.avg_diameter_mm if cfg.avg_diameter_mm > 0 else None
    priors = class_priors(records, override)
    out = _out_dir(args.out)
    _write(out, "priors.json", to_json({"priors": [p.to_json() for p in priors],
                                        "config": cfg.echo()}))
    _write(out, "config.txt", cfg.to_text())
    print(f"wrote {len(priors)} class priors")
    return EXIT_OK


def cmd_experiment(args, cfg):
    out = _out_dir(args.out)
    if args.name == "collapse":
        rep = collapse_experiment(cfg.fit_config())
        rows = [[name, r["symmetric"], r["direction"], r["offset"], r["volume_ratio"],
                 r["iterations"], r["stop_reason"]]
                for name, r in rep.items() if isinstance(r, dict)]
        _write(out, "collapse.csv", to_csv(
            ["run", "symmetric", "direction", "offset", "volume_ratio", "iterations",
             "stop_reason"], rows))
        summary = ", ".join(f"{r[0]}={r[4]:.4f}" for r in rows)
    else:
        if args.model:
            model = _load_model(args.model, cfg)
        else:
            model = synthetic_model((150.0, 100.0, 80.0), seed=cfg.seed)
        surrogate = mesh_cube_scaled(model, args.surrogate_scale)
        fc = cfg.fit_config()
        fc = type(fc)(fc.max_iters, fc.step_size, fc.converge_tol, fc.patience,
                      fit_scale=False, seed=cfg.seed)
        rep = model_swap_experiment(model, surrogate, args.trials, fc, cfg.k,
                                    cfg.init_angle_deg, cfg.init_trans_frac, exact=True,
                                    workers=args.workers)
        _write(out, "swap.csv", to_csv(
            ["seed", "init_error_mm", "final_error_mm", "iterations", "stop_reason"],
            [[t["seed"], t["init_error_mm"], t["final_error_mm"], t["iterations"],
              t["stop_reason"]] for t in rep["trials"]]))
        summary = f"accuracy {rep['accuracy']:.3f} ({rep['correct']}/{rep['n_trials']})"
    rep["config"] = cfg.echo()
    _write(out, f"{args.name}.json", to_json(rep))
    _write(out, "config.txt", cfg.to_text())
    print(f"{args.name}: {summary}")
    return EXIT_OK


def mesh_cube_scaled(points, factor):
    """Bounding cube of ``points`` scaled by ``factor`` about its centre."""
    cube = mesh_cube(MeshModel(points))
    c = cube.centroid
    return BoundingCube(c + (cube.vertices - c) * factor)


# ---------------------------------------------------------------- wiring


def build_parser():
    parser = argparse.ArgumentParser(prog="cubepose", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--pred", required=True, help="prediction JSONL")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit", help="fit pose and scale of one record by gradient descent")
    p.add_argument("--prior", required=True, help="priors.json or inline 'l,w,h' in mm")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--record", type=int, default=0,
                   help="index of the record in (image_id, class_id) order")
    p.add_argument("--init", choices=("perturbed", "gt"), default="perturbed")
    p.add_argument("--model", help="PLY model the fitted pose is scored on")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="optional output directory for gradcheck.json")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("audit", help="flag invisible ground-truth cubes")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--intrinsics", required=True, help="camera intrinsics file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("prior", help="class-average prior cubes")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("experiment", help="run a built-in experiment")
    p.add_argument("name", choices=("collapse", "swap"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", help="PLY model for the swap experiment")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--surrogate-scale", type=float, default=1.3)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except Diverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except BadValue as exc:
        print(f"error: bad config value for {exc.key!r}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CubePoseError, ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
