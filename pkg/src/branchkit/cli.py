"""``branchkit`` command line: generate, corrupt, complete, characterize, prune,
evaluate and loss-eval.

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from . import io, losses, pipeline
from .characterize import TraitRecord, characterize_branch
from .completion import complete, estimate_skeleton, refine, synthesize_coarse
from .errors import BranchkitError, Divergence, InvalidParams
from .pruning import emit_pruning_map, plan_pruning
from .synth_gen import corrupt_gaps, jitter, occlude

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0 or the config's)")
    p.add_argument("--out", default=None, help="output path or directory")
    p.add_argument("--config", default=None, help="JSON run configuration")


def _vec(s):
    v = [float(x) for x in s.split(",")]
    if len(v) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="branchkit", description=" ".join(__doc__.split("\n\n")[0].split()))
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesise a branch dataset and its manifest")
    _common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--kind", choices=["fb", "nb"], default=None)
    p.add_argument("--split-rounding", choices=["floor", "round"], default=None)
    p.add_argument("--train-count", type=int, default=None)

    p = sub.add_parser("corrupt", help="occlude, cut gaps into and add noise to a cloud")
    _common(p)
    p.add_argument("cloud")
    p.add_argument("--occlusion", type=float, default=0.4)
    p.add_argument("--direction", type=_vec, default=None, help="occlusion direction x,y,z (default random)")
    p.add_argument("--gaps", type=int, default=2)
    p.add_argument("--gap-radius", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian sigma in metres")

    p = sub.add_parser("complete", help="complete one partial cloud or a whole manifest")
    _common(p)
    p.add_argument("input", help="partial cloud (XYZ/PLY) or manifest.json")
    p.add_argument("--skeleton", default=None, help="skeleton JSON to use instead of estimating one")
    p.add_argument("--gt-skeleton", default=None, help="ground-truth skeleton JSON (adds the skeleton term)")
    p.add_argument("--base", type=_vec, default=None, help="branch base point x,y,z")
    p.add_argument("--format", choices=["ply", "xyz"], default="ply")

    p = sub.add_parser("characterize", help="traits of one branch cloud")
    _common(p)
    p.add_argument("cloud")
    p.add_argument("--id", default="branch")
    p.add_argument("--base", type=_vec, default=None)
    p.add_argument("--trunk-axis", type=_vec, default=[0.0, 0.0, 1.0])
    p.add_argument("--height", type=float, default=None, help="attachment height (default: base z)")

    p = sub.add_parser("prune", help="pruning plan and map from a traits CSV")
    _common(p)
    p.add_argument("traits", help="CSV with branch_id, diameter, angle, length, attachment_height")
    p.add_argument("--tree", default=None, help="tree JSON for the pruning map")
    p.add_argument("--diameter-cutoff-cm", type=float, default=2.0)
    p.add_argument("--length-cutoff-cm", type=float, default=45.0)

    p = sub.add_parser("evaluate", help="raw vs completed trait errors and pruning flips")
    _common(p)
    p.add_argument("manifest")
    p.add_argument("--diameter-cutoff-cm", type=float, default=None)
    p.add_argument("--length-cutoff-cm", type=float, default=None)

    p = sub.add_parser("loss-eval", help="loss value and gradient norm for two clouds")
    _common(p)
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--loss", choices=["chamfer", "repulsion", "variance"], default="chamfer")
    p.add_argument("--norm", choices=["l1", "l2"], default="l1")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--h", type=float, default=None)
    return ap


def _run_config(args, **extra):
    over = {"seed": args.seed, "out": args.out}
    over.update(extra)
    return pipeline.load_config(args.config, **over)


def _completion_cfg(args):
    return _run_config(args).completion if args.config else pipeline.RunConfig().completion


def cmd_generate(args):
    cfg = _run_config(args, count=args.count, kind=args.kind, split_rounding=args.split_rounding,
                      train_count=args.train_count)
    m = pipeline.cmd_generate(cfg)
    print(f"wrote {len(m['entries'])} branches ({m['split']['train']} train / {m['split']['test']} test) "
          f"to {os.path.join(cfg.out, 'manifest.json')}")


def cmd_corrupt(args):
    cloud = io.read_cloud(args.cloud)
    rng = np.random.default_rng(args.seed or 0)
    direction = args.direction if args.direction is not None else rng.standard_normal(3)
    if args.occlusion > 0:
        cloud = occlude(cloud, args.occlusion, direction)
    if args.gaps:
        cloud.require_nonempty()
        centers = cloud.points[rng.choice(len(cloud), size=args.gaps, replace=False)]
        cloud = corrupt_gaps(cloud, centers, args.gap_radius)
    cloud = jitter(cloud, args.noise, int(rng.integers(2 ** 63)))
    out = args.out or "partial.ply"
    io.write_cloud(out, cloud)
    print(f"wrote {len(cloud)} points to {out}")


def cmd_complete(args):
    if args.input.endswith(".json"):
        # a manifest carries its own completion settings unless --config overrides them
        res = pipeline.cmd_complete(args.input, _run_config(args).completion if args.config else None, args.out)
        cds = [float(r[3]) for r in res["summary"]]
        print(f"completed {len(cds)} branches; mean CD-l1 x1000 = {np.mean(cds):.4f}")
        return
    cfg = _completion_cfg(args)
    partial = io.read_cloud(args.input).require_nonempty()
    seed = pipeline.derive_seed(args.seed or 0, "coarse") % (2 ** 63)
    gt = io.skeleton_from_dict(io.read_json(args.gt_skeleton)).centers if args.gt_skeleton else None
    if args.skeleton:
        skel = io.skeleton_from_dict(io.read_json(args.skeleton))
        if cfg.output_count < len(partial):
            raise InvalidParams(f"output_count {cfg.output_count} is below the partial size {len(partial)}")
        res = refine(synthesize_coarse(skel, cfg.output_count, seed), partial, skel, cfg, gt)
    else:
        res = complete(partial, cfg, seed, base_point=args.base, gt_skeleton=gt)
    out = io.ensure_dir(args.out or "completed")
    io.write_cloud(os.path.join(out, f"completed.{args.format}"), res.completed)
    io.write_json(os.path.join(out, "skeleton.json"), io.skeleton_to_dict(res.skeleton_est))
    io.write_trace_csv(os.path.join(out, "trace.csv"), res.loss_trace)
    print(f"wrote {len(res.completed)} points to {out}; final loss {res.loss_trace['total'][-1]:.6g}")


def cmd_characterize(args):
    cloud = io.read_cloud(args.cloud).require_nonempty()
    skel = estimate_skeleton(cloud, base_point=args.base)
    height = args.height if args.height is not None else float(skel.centers[0][2])
    rec = characterize_branch(cloud, skel, args.trunk_axis, height, args.id)
    doc = {"branch_id": rec.branch_id, "diameter_mm": rec.diameter, "angle_deg": rec.angle,
           "length_cm": rec.length, "height_m": rec.attachment_height}
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def read_traits_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise io.IoError(str(exc)) from None
    try:
        return [TraitRecord(r["branch_id"], float(r["diameter"]), float(r["angle"]), float(r["length"]),
                            float(r["attachment_height"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise InvalidParams(f"{path}: bad traits row ({exc})") from None


def cmd_prune(args):
    plan = plan_pruning(read_traits_csv(args.traits), args.diameter_cutoff_cm, args.length_cutoff_cm)
    out = io.ensure_dir(args.out or "pruning")
    io.write_json(os.path.join(out, "plan.json"), plan.to_dict())
    if args.tree:
        tree = io.tree_from_dict(io.read_json(args.tree))
        emit_pruning_map(plan, tree, os.path.join(out, "map.svg"), os.path.join(out, "map.json"))
    for d in plan.decisions:
        extra = f" #{d.order}" if d.order else (f" to {d.to_length_cm:g} cm" if d.to_length_cm else "")
        print(f"{d.branch_id}: {d.action}{extra}")


def cmd_evaluate(args):
    manifest = pipeline.load_manifest(args.manifest)
    if not manifest["entries"]:
        print("manifest has no entries; nothing to evaluate", file=sys.stderr)
        return EXIT_INPUT
    res = pipeline.cmd_evaluate(args.manifest, args.out, None, args.diameter_cutoff_cm, args.length_cutoff_cm)
    print(res["table"])
    print(f"pruning decision flips (raw -> completed): {len(res['flips'])} of {res['n']} branches")


def cmd_loss_eval(args):
    pred = io.read_cloud(args.pred).points
    other = io.read_cloud(args.gt).points
    if args.loss == "chamfer":
        lv = losses.chamfer(pred, other, args.norm)
    elif args.loss == "repulsion":
        lv = losses.repulsion(pred, args.k, args.h)
    else:
        lv = losses.variance_loss(pred, other)
    print(f"value {lv.value!r}")
    print(f"grad_norm {float(np.linalg.norm(lv.gradient))!r}")


COMMANDS = {"generate": cmd_generate, "corrupt": cmd_corrupt, "complete": cmd_complete,
            "characterize": cmd_characterize, "prune": cmd_prune, "evaluate": cmd_evaluate,
            "loss-eval": cmd_loss_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except Divergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BranchkitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
