"""End-to-end orchestration: dataset generation, completion, evaluation.

All randomness derives from one root seed through named sub-streams, so a
branch's data depends only on the root seed and its own name.
"""
import hashlib
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional

import numpy as np

from . import io
from .characterize import (ReportRow, TraitRecord, characterize_branch, error_metrics, report_csv,
                           report_table)
from .completion import CompletionConfig, complete, estimate_skeleton
from .errors import DegenerateSkeleton, InvalidParams, IoError, TooSparse
from .losses import LossWeights, chamfer_value
from .pruning import decision_flips, emit_pruning_map, plan_pruning
from .synth_gen import (TreeUnitParams, branch_truth, corrupt_gaps, generate_tree_unit,
                        jitter, occlude, random_fb_tree, render_partial, resample_skeleton, sample_complete)
from .synth_gen.truth import DEFAULT_OFFSET, DEFAULT_WINDOW
from .synth_gen.types import PointCloud, ViewConfig

MANIFEST_VERSION = 1


def derive_seed(root: int, *names) -> int:
    """64-bit seed for the stream named by ``names`` under ``root``."""
    key = "/".join([str(int(root))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def split_counts(total: int, train_fraction: float = 0.8, rounding: str = "floor",
                 train_count: Optional[int] = None):
    """(train, test) sizes.

    ``train_count`` overrides the fraction. 1432 branches at 0.8 give
    1145/287 with "floor" and 1146/286 with "round"; the 1136/296 split
    needs ``train_count=1136``.
    """
    if train_count is not None:
        if not 0 <= train_count <= total:
            raise InvalidParams(f"train_count {train_count} outside [0, {total}]")
        return int(train_count), total - int(train_count)
    if not 0.0 <= train_fraction <= 1.0:
        raise InvalidParams("train_fraction must be in [0, 1]")
    raw = train_fraction * total
    if rounding == "floor":
        n = math.floor(raw + 1e-9)
    elif rounding == "round":
        n = math.floor(raw + 0.5)
    else:
        raise InvalidParams(f"unknown rounding mode {rounding!r}")
    return n, total - n


@dataclass
class RunConfig:
    seed: int = 0
    count: int = 10
    kind: str = "fb"
    branches_per_tree: int = 6
    complete_count: int = 8192
    partial_count: int = 2048
    partial_mode: str = "render"
    occlusion: float = 0.4
    gap_count: int = 2
    gap_radius: float = 0.02
    noise_sigma: float = 0.002
    render_resolution: int = 256
    train_fraction: float = 0.8
    split_rounding: str = "floor"
    train_count: Optional[int] = None
    completion: CompletionConfig = field(default_factory=lambda: CompletionConfig(output_count=8192))
    diameter_cutoff_cm: float = 2.0
    length_cutoff_cm: float = 45.0
    offset: float = DEFAULT_OFFSET
    window: float = DEFAULT_WINDOW
    out: str = "run"

    def __post_init__(self):
        if self.count < 0 or self.branches_per_tree < 1:
            raise InvalidParams("count must be >= 0 and branches_per_tree >= 1")
        if self.kind not in ("fb", "nb"):
            raise InvalidParams("kind must be 'fb' or 'nb'")
        if self.partial_mode not in ("halfspace", "render"):
            raise InvalidParams("partial_mode must be 'halfspace' or 'render'")
        if not 0.0 <= self.occlusion < 1.0 or self.gap_count < 0 or self.gap_radius < 0 or self.noise_sigma < 0:
            raise InvalidParams("invalid corruption parameters")
        if self.completion.output_count < self.partial_count:
            raise InvalidParams("completion output_count must be >= partial_count")
        split_counts(self.count, self.train_fraction, self.split_rounding, self.train_count)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParams(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        comp = data.pop("completion", None)
        cfg = cls(**{k: v for k, v in data.items()})
        if comp is not None:
            cfg.completion = completion_config_from_dict(comp, cfg.completion)
            cfg.__post_init__()
        return cfg


def completion_config_from_dict(data: dict, base: Optional[CompletionConfig] = None) -> CompletionConfig:
    base = base or CompletionConfig()
    data = dict(data)
    w = data.pop("weights", None)
    known = {f.name for f in fields(CompletionConfig)}
    unknown = set(data) - known
    if unknown:
        raise InvalidParams(f"unknown completion keys: {sorted(unknown)}")
    cfg = replace(base, **data)
    if w is not None:
        cfg = replace(cfg, weights=LossWeights(**w))
    return cfg


def load_config(path=None, **overrides) -> RunConfig:
    data = io.read_json(path) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


# -- data generation ---------------------------------------------------------------
@dataclass
class BranchSample:
    branch_id: str
    tree_id: str
    tree_branch_id: str
    model: object
    complete: PointCloud
    partial: PointCloud
    truth: dict
    base_point: np.ndarray
    trunk_axis: np.ndarray
    seed: int


def make_tree(cfg: RunConfig, t: int):
    seed = derive_seed(cfg.seed, "tree", t)
    if cfg.kind == "fb":
        return random_fb_tree(seed % (2 ** 63), n_branches=cfg.branches_per_tree)
    depth = max(1, math.ceil(cfg.branches_per_tree / 2))
    return generate_tree_unit(TreeUnitParams(depth=depth, branches_per_unit=2), seed % (2 ** 63))


def corrupt_partial(model, cfg: RunConfig, name: str) -> PointCloud:
    """Scanner-like partial view: occlusion, gaps along the branch, sensor noise."""
    seed = derive_seed(cfg.seed, name, "partial")
    rng = np.random.default_rng(seed)
    axis = model.centerline(model.length) - model.centerline(0.0)
    axis /= np.linalg.norm(axis)
    side = np.cross(axis, rng.standard_normal(3))
    side /= np.linalg.norm(side)
    if cfg.partial_mode == "render":
        vp = model.centerline(0.5 * model.length) + 1.0 * side
        cloud = render_partial(model, ViewConfig(vp, cfg.partial_count, cfg.render_resolution), seed % (2 ** 63))
        # occluder to one side of the line of sight
        side = np.cross(axis, side)
    else:
        cloud = sample_complete(model, cfg.partial_count, seed % (2 ** 63))
    if cfg.occlusion > 0:
        cloud = occlude(cloud, cfg.occlusion, side)
    if cfg.gap_count:
        centers = model.centerline(rng.uniform(0.15, 0.85, cfg.gap_count) * model.length)
        cloud = corrupt_gaps(cloud, centers, cfg.gap_radius)
    return jitter(cloud, cfg.noise_sigma, int(rng.integers(2 ** 63)))


def generate_samples(cfg: RunConfig) -> Iterator[BranchSample]:
    """Branch samples in manifest order; trees are built lazily."""
    made, t = 0, 0
    while made < cfg.count:
        tree = make_tree(cfg, t)
        tid = f"t{t:03d}"
        for i, (model, attach) in enumerate(tree.branches):
            if made == cfg.count:
                break
            s_a = attach * tree.trunk.length
            name = f"{tid}-{model.id}"
            axis = tree.trunk.tangent(s_a)
            height = float(tree.trunk.centerline(s_a)[2])
            truth = branch_truth(model, axis, height, cfg.offset, cfg.window, branch_id=name)
            seed_c = derive_seed(cfg.seed, name, "complete")
            yield BranchSample(
                branch_id=name, tree_id=tid, tree_branch_id=model.id, model=model,
                complete=sample_complete(model, cfg.complete_count, seed_c % (2 ** 63)),
                partial=corrupt_partial(model, cfg, name), truth=truth,
                base_point=model.centerline(0.0), trunk_axis=axis, seed=seed_c,
            )
            made += 1
        yield tree
        t += 1


def _write_tree(out, tid, tree):
    io.ensure_dir(os.path.join(out, "trees"))
    path = os.path.join(out, "trees", f"{tid}.json")
    io.write_json(path, io.tree_to_dict(tree))
    return path


def cmd_generate(cfg: RunConfig) -> dict:
    """Write clouds, skeletons, truth sidecars and the manifest under ``cfg.out``."""
    out = io.ensure_dir(cfg.out)
    entries, trees = [], {}
    for item in generate_samples(cfg):
        if not isinstance(item, BranchSample):
            tid = f"t{len(trees):03d}"
            trees[tid] = os.path.relpath(_write_tree(out, tid, item), out)
            continue
        s = item
        d = io.ensure_dir(os.path.join(out, "data", s.branch_id))
        paths = {
            "complete_path": os.path.join(d, "complete.ply"),
            "partial_path": os.path.join(d, "partial.ply"),
            "skeleton_path": os.path.join(d, "skeleton.json"),
            "truth_path": os.path.join(d, "truth.json"),
        }
        io.write_ply(paths["complete_path"], s.complete)
        io.write_ply(paths["partial_path"], s.partial)
        io.write_json(paths["skeleton_path"], io.branch_to_dict(s.model))
        io.write_json(paths["truth_path"], {k: s.truth[k] for k in ("diameter_mm", "angle_deg", "length_cm", "height_m")})
        entry = {"branch_id": s.branch_id, "tree": s.tree_id, "tree_branch_id": s.tree_branch_id,
                 "seed": s.seed, "params": {"base_point": s.base_point.tolist(), "trunk_axis": s.trunk_axis.tolist(),
                                            "height_m": s.truth["height_m"]}}
        entry.update({k: os.path.relpath(v, out) for k, v in paths.items()})
        entries.append(entry)
    n_train, _ = split_counts(len(entries), cfg.train_fraction, cfg.split_rounding, cfg.train_count)
    perm = np.random.default_rng(derive_seed(cfg.seed, "split") % (2 ** 63)).permutation(len(entries))
    train = set(perm[:n_train].tolist())
    for i, e in enumerate(entries):
        e["split"] = "train" if i in train else "test"
    # the output directory is left out so the manifest does not depend on where it is written
    config = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    manifest = {"version": MANIFEST_VERSION, "config": config, "trees": trees,
                "split": {"train": n_train, "test": len(entries) - n_train}, "entries": entries}
    io.write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def load_manifest(path) -> dict:
    doc = io.read_json(path)
    if not isinstance(doc, dict) or "entries" not in doc:
        raise IoError(f"{path}: not a manifest")
    doc["_root"] = os.path.dirname(os.path.abspath(path))
    return doc


def _abs(manifest, rel):
    return os.path.join(manifest["_root"], rel)


# -- completion --------------------------------------------------------------------
def complete_entry(manifest, entry, cfg: CompletionConfig, root_seed: int):
    partial = io.read_cloud(_abs(manifest, entry["partial_path"]))
    gt_model = io.branch_from_dict(io.read_json(_abs(manifest, entry["skeleton_path"])))
    gt_skel = resample_skeleton(gt_model, 100)
    seed = derive_seed(root_seed, entry["branch_id"], "coarse") % (2 ** 63)
    return complete(partial, cfg, seed, base_point=entry["params"]["base_point"], gt_skeleton=gt_skel)


def cmd_complete(manifest_path, cfg: Optional[CompletionConfig] = None, out: Optional[str] = None) -> dict:
    """Complete every manifest entry; write per-branch results and a CD summary."""
    manifest = load_manifest(manifest_path)
    if not manifest["entries"]:
        raise InvalidParams("manifest has no entries")
    run = RunConfig.from_dict(manifest["config"])
    cfg = cfg or run.completion
    out = io.ensure_dir(out or os.path.join(manifest["_root"], "completed"))
    rows, done = [], {}
    for e in manifest["entries"]:
        res = complete_entry(manifest, e, cfg, run.seed)
        d = io.ensure_dir(os.path.join(out, e["branch_id"]))
        paths = {"completed_path": os.path.join(d, "completed.ply"),
                 "coarse_path": os.path.join(d, "coarse.ply"),
                 "skeleton_est_path": os.path.join(d, "skeleton_est.json"),
                 "trace_path": os.path.join(d, "trace.csv")}
        io.write_ply(paths["completed_path"], res.completed)
        io.write_ply(paths["coarse_path"], res.coarse)
        io.write_json(paths["skeleton_est_path"], io.skeleton_to_dict(res.skeleton_est))
        io.write_trace_csv(paths["trace_path"], res.loss_trace)
        gt = io.read_cloud(_abs(manifest, e["complete_path"]))
        rows.append([e["branch_id"], e["split"],
                     repr(1000.0 * chamfer_value(res.partial.points, gt.points)),
                     repr(1000.0 * chamfer_value(res.completed.points, gt.points))])
        done[e["branch_id"]] = {k: os.path.relpath(v, manifest["_root"]) for k, v in paths.items()}
    io.write_rows_csv(os.path.join(out, "summary.csv"),
                      ["branch_id", "split", "cd_l1_x1000_partial", "cd_l1_x1000_completed"], rows)
    index = {"version": MANIFEST_VERSION, "completion": asdict(cfg), "entries": done}
    io.write_json(os.path.join(manifest["_root"], "completion.json"), index)
    return {"summary": rows, "index": index}


# -- evaluation --------------------------------------------------------------------
def characterize_cloud(cloud, entry, run: RunConfig) -> TraitRecord:
    """Skeleton estimate plus traits for one branch cloud."""
    p = entry["params"]
    skel = estimate_skeleton(cloud, run.completion.slice_count, base_point=p["base_point"])
    return characterize_branch(cloud, skel, p["trunk_axis"], p["height_m"], entry["branch_id"],
                               run.offset, run.window)


def _completed_cloud(manifest, entry, run, cfg):
    idx_path = os.path.join(manifest["_root"], "completion.json")
    if os.path.exists(idx_path):
        idx = io.read_json(idx_path)["entries"]
        if entry["branch_id"] in idx:
            return io.read_cloud(_abs(manifest, idx[entry["branch_id"]]["completed_path"]))
    return complete_entry(manifest, entry, cfg or run.completion, run.seed).completed


def branch_traits(manifest, completion: str = "raw", cfg: Optional[CompletionConfig] = None):
    """(estimated, truth) trait pairs per entry, in manifest order."""
    if completion not in ("raw", "optimizer", "complete"):
        raise InvalidParams(f"unknown completion mode {completion!r}")
    run = RunConfig.from_dict(manifest["config"])
    out = []
    for e in manifest["entries"]:
        if completion == "raw":
            cloud = io.read_cloud(_abs(manifest, e["partial_path"]))
        elif completion == "complete":
            cloud = io.read_cloud(_abs(manifest, e["complete_path"]))
        else:
            cloud = _completed_cloud(manifest, e, run, cfg)
        out.append((characterize_cloud(cloud, e, run), io.read_json(_abs(manifest, e["truth_path"]))))
    return out


def trait_reports(pairs, model: str, dataset: str) -> List[ReportRow]:
    if not pairs:
        return []
    est = [p[0] for p in pairs]
    truth = [p[1] for p in pairs]
    return [
        ReportRow(model, dataset, "diameter", error_metrics([t.diameter for t in est], [g["diameter_mm"] for g in truth])),
        ReportRow(model, dataset, "angle", error_metrics([t.angle for t in est], [g["angle_deg"] for g in truth])),
    ]


def evaluate_pipeline(manifest, completion: str = "raw", cfg: Optional[CompletionConfig] = None,
                      dataset: str = "synthetic") -> List[ReportRow]:
    """Table-2-style error rows for one input mode ("raw" or "optimizer").

    An empty manifest yields an empty table.
    """
    if isinstance(manifest, (str, os.PathLike)):
        manifest = load_manifest(manifest)
    if not manifest["entries"]:
        return []
    model = "Raw" if completion == "raw" else ("Optimizer" if completion == "optimizer" else "Complete")
    return trait_reports(branch_traits(manifest, completion, cfg), model, dataset)


def _plans_by_tree(manifest, records, run):
    groups: Dict[str, list] = {}
    for e, rec in zip(manifest["entries"], records):
        groups.setdefault(e["tree"], []).append(replace(rec, branch_id=e["tree_branch_id"]))
    return {t: plan_pruning(recs, run.diameter_cutoff_cm, run.length_cutoff_cm) for t, recs in groups.items()}


def cmd_evaluate(manifest_path, out: Optional[str] = None, cfg: Optional[CompletionConfig] = None,
                 diameter_cutoff_cm: Optional[float] = None, length_cutoff_cm: Optional[float] = None) -> dict:
    """Raw vs completed error reports, pruning plans for both, decision flips."""
    manifest = load_manifest(manifest_path)
    if not manifest["entries"]:
        raise InvalidParams("manifest has no entries")
    run = RunConfig.from_dict(manifest["config"])
    if diameter_cutoff_cm is not None:
        run.diameter_cutoff_cm = diameter_cutoff_cm
    if length_cutoff_cm is not None:
        run.length_cutoff_cm = length_cutoff_cm
    out = io.ensure_dir(out or os.path.join(manifest["_root"], "evaluation"))
    raw = branch_traits(manifest, "raw", cfg)
    comp = branch_traits(manifest, "optimizer", cfg)
    rows = trait_reports(raw, "Raw", "synthetic") + trait_reports(comp, "Optimizer", "synthetic")
    with open(os.path.join(out, "report.csv"), "w", newline="") as fh:
        fh.write(report_csv(rows))
    table = report_table(rows)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(table + "\n")

    trait_rows = []
    for e, (r, g), (c, _) in zip(manifest["entries"], raw, comp):
        trait_rows.append([e["branch_id"], repr(g["diameter_mm"]), repr(r.diameter), repr(c.diameter),
                           repr(g["angle_deg"]), repr(r.angle), repr(c.angle),
                           repr(g["length_cm"]), repr(r.length), repr(c.length)])
    io.write_rows_csv(os.path.join(out, "traits.csv"),
                      ["branch_id", "diameter_mm_truth", "diameter_mm_raw", "diameter_mm_completed",
                       "angle_deg_truth", "angle_deg_raw", "angle_deg_completed",
                       "length_cm_truth", "length_cm_raw", "length_cm_completed"], trait_rows)

    plans_raw = _plans_by_tree(manifest, [r for r, _ in raw], run)
    plans_comp = _plans_by_tree(manifest, [c for c, _ in comp], run)
    maps = io.ensure_dir(os.path.join(out, "maps"))
    flips = []
    for tid in sorted(plans_comp):
        tree = io.tree_from_dict(io.read_json(_abs(manifest, manifest["trees"][tid])))
        for label, plans in (("raw", plans_raw), ("completed", plans_comp)):
            emit_pruning_map(plans[tid], tree, os.path.join(maps, f"{tid}_{label}.svg"),
                             os.path.join(maps, f"{tid}_{label}.json"))
        before, after = plans_raw[tid].by_id(), plans_comp[tid].by_id()
        for bid in decision_flips(plans_raw[tid], plans_comp[tid]):
            flips.append([tid, bid, before[bid].action, after[bid].action])
    io.write_rows_csv(os.path.join(out, "flips.csv"), ["tree", "branch_id", "raw_action", "completed_action"], flips)
    return {"rows": rows, "table": table, "flips": flips, "n": len(raw)}


# -- in-memory benchmark ------------------------------------------------------------
@dataclass
class BenchmarkResult:
    branch_ids: List[str]
    truth_diameter: np.ndarray
    raw_diameter: np.ndarray
    completed_diameter: Dict[str, np.ndarray]
    cd: Dict[str, np.ndarray]
    cd_coarse: np.ndarray
    cd_partial: np.ndarray
    skipped: List[str] = field(default_factory=list)

    def mae(self, key=None) -> float:
        est = self.raw_diameter if key is None else self.completed_diameter[key]
        return float(np.mean(np.abs(est - self.truth_diameter)))

    def win_fraction(self, key) -> float:
        raw = np.abs(self.raw_diameter - self.truth_diameter)
        comp = np.abs(self.completed_diameter[key] - self.truth_diameter)
        return float(np.mean(comp < raw))


def run_completion_benchmark(cfg: RunConfig, variants: Dict[str, CompletionConfig]) -> BenchmarkResult:
    """Raw vs completed diameter and CD-l1 to ground truth over ``cfg.count`` branches.

    Each variant refines from the same skeleton estimate and coarse cloud.
    Partials whose raw diameter cannot be measured at all (too few points or
    too short a skeleton at the measurement station) are listed in
    ``skipped`` and replaced by the next branch, so ``cfg.count`` branches are
    always compared.
    """
    from .completion import refine, synthesize_coarse

    ids, truth, raw = [], [], []
    comp = {k: [] for k in variants}
    cd = {k: [] for k in variants}
    cd_coarse, cd_partial = [], []
    base_cfg = next(iter(variants.values()))
    skipped = []
    # sample ids and seeds do not depend on count, so a longer stream only appends replacements
    for s in generate_samples(replace(cfg, count=2 * cfg.count + 10)):
        if len(ids) == cfg.count:
            break
        if not isinstance(s, BranchSample):
            continue
        entry = {"branch_id": s.branch_id, "params": {"base_point": s.base_point, "trunk_axis": s.trunk_axis,
                                                      "height_m": s.truth["height_m"]}}
        try:
            raw_d = characterize_cloud(s.partial, entry, cfg).diameter
        except (TooSparse, DegenerateSkeleton):
            skipped.append(s.branch_id)
            continue
        ids.append(s.branch_id)
        truth.append(s.truth["diameter_mm"])
        raw.append(raw_d)
        skel = estimate_skeleton(s.partial, base_cfg.slice_count, base_point=s.base_point)
        coarse = synthesize_coarse(skel, base_cfg.output_count, derive_seed(cfg.seed, s.branch_id, "coarse") % (2 ** 63))
        cd_coarse.append(1000.0 * chamfer_value(coarse.points, s.complete.points))
        cd_partial.append(1000.0 * chamfer_value(s.partial.points, s.complete.points))
        for k, vcfg in variants.items():
            res = refine(coarse, s.partial, skel, vcfg)
            comp[k].append(characterize_cloud(res.completed, entry, cfg).diameter)
            cd[k].append(1000.0 * chamfer_value(res.completed.points, s.complete.points))
    arr = np.asarray
    return BenchmarkResult(ids, arr(truth), arr(raw), {k: arr(v) for k, v in comp.items()},
                           {k: arr(v) for k, v in cd.items()}, arr(cd_coarse), arr(cd_partial), skipped)
