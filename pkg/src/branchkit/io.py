"""Point-cloud, skeleton, tree and table file formats."""
import csv
import json
import os
from typing import Optional

import numpy as np

from .errors import IoError
from .synth_gen.branch import BranchModel, TreeModel, fit_spline
from .synth_gen.types import PointCloud, SkeletalSphere, Skeleton, as_points

FORMAT_VERSION = 1
_PLY_TYPES = {"double": "<f8", "float64": "<f8", "float": "<f4", "float32": "<f4"}


# -- point clouds -------------------------------------------------------------
def write_xyz(path, cloud) -> None:
    pts = as_points(cloud)
    with open(path, "w") as fh:
        for x, y, z in pts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def write_ply(path, cloud) -> None:
    """Binary little-endian PLY with float64 x, y, z."""
    pts = np.ascontiguousarray(as_points(cloud), dtype="<f8")
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(pts)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.tobytes())


def write_cloud(path, cloud) -> None:
    if str(path).lower().endswith(".ply"):
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


def _read_ply(raw: bytes) -> np.ndarray:
    end = raw.find(b"end_header")
    if end < 0:
        raise IoError("PLY header has no end_header")
    nl = raw.find(b"\n", end)
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt, count, props, in_vertex = None, None, [], False
    for line in lines:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise IoError("list properties on vertices are not supported")
            props.append((tok[2], tok[1]))
    names = [p for p, _ in props]
    if count is None or not {"x", "y", "z"} <= set(names):
        raise IoError("PLY lacks a vertex element with x, y, z")
    body = raw[nl + 1:]
    if fmt == "ascii":
        table = np.array(body.decode("ascii").split(), dtype=np.float64)
        if table.size != count * len(props):
            raise IoError("PLY vertex data truncated")
        table = table.reshape(count, len(props))
        return table[:, [names.index(a) for a in "xyz"]]
    if fmt != "binary_little_endian":
        raise IoError(f"unsupported PLY format {fmt!r}")
    try:
        dtype = np.dtype([(p, _PLY_TYPES[t]) for p, t in props])
    except KeyError as exc:
        raise IoError(f"unsupported PLY property type {exc}") from None
    if len(body) < dtype.itemsize * count:
        raise IoError("PLY vertex data truncated")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    return np.column_stack([rec[a].astype(np.float64) for a in "xyz"])


def read_cloud(path) -> PointCloud:
    """Read XYZ or PLY, detected from the file content rather than its name."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from None
    try:
        if raw.startswith(b"ply"):
            pts = _read_ply(raw)
        else:
            rows = [ln.split() for ln in raw.decode("ascii").splitlines() if ln.strip()]
            if any(len(r) < 3 for r in rows):
                raise IoError(f"{path}: XYZ lines need three coordinates")
            pts = np.array([r[:3] for r in rows], dtype=np.float64).reshape(-1, 3)
        return PointCloud(pts)
    except (ValueError, UnicodeDecodeError) as exc:
        raise IoError(f"{path}: {exc}") from None


# -- skeletons and models -----------------------------------------------------
def skeleton_to_dict(skeleton: Skeleton) -> dict:
    return {"version": FORMAT_VERSION,
            "spheres": [{"c": c.tolist(), "r": float(r)} for c, r in zip(skeleton.centers, skeleton.radii)],
            "taper": None, "children": []}


def _spheres_of(doc):
    try:
        return [SkeletalSphere(np.asarray(s["c"], dtype=np.float64), float(s["r"])) for s in doc["spheres"]]
    except (KeyError, TypeError) as exc:
        raise IoError(f"malformed sphere list: {exc}") from None


def skeleton_from_dict(doc) -> Skeleton:
    return Skeleton.from_spheres(_spheres_of(doc))


def branch_to_dict(model: BranchModel) -> dict:
    """Spline control points as spheres; radii follow the taper at each point."""
    pts = model.spline.points
    s = model.spline.length_at(np.linspace(0.0, 1.0, len(pts)))
    r = model.taper.radius(np.clip(s, 0.0, model.length))
    return {"version": FORMAT_VERSION, "id": model.id,
            "spheres": [{"c": c.tolist(), "r": float(v)} for c, v in zip(pts, np.atleast_1d(r))],
            "taper": {"angle_deg": model.taper.taper_angle, "min_r": model.taper.min_radius},
            "children": []}


def branch_from_dict(doc) -> BranchModel:
    taper = doc.get("taper") or {}
    kw = {}
    if "angle_deg" in taper:
        kw["taper_angle"] = float(taper["angle_deg"])
    if "min_r" in taper:
        kw["min_radius"] = float(taper["min_r"])
    return fit_spline(_spheres_of(doc), id=doc.get("id", 0), **kw)


def tree_to_dict(tree: TreeModel) -> dict:
    doc = branch_to_dict(tree.trunk)
    doc["provenance"] = tree.provenance
    for model, attach in tree.branches:
        child = branch_to_dict(model)
        child["attach"] = float(attach)
        doc["children"].append(child)
    return doc


def tree_from_dict(doc) -> TreeModel:
    trunk = branch_from_dict(doc)
    branches = [(branch_from_dict(c), float(c["attach"])) for c in doc.get("children", [])]
    return TreeModel(trunk, branches, doc.get("provenance", {"kind": "FromSkeleton"}))


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"{path}: {exc}") from None


# -- tables ---------------------------------------------------------------------
def write_trace_csv(path, trace) -> None:
    """Loss trace with columns step, cd, rep, var, total."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace.dtype.names)
        for row in trace:
            w.writerow([int(row[0])] + [repr(float(v)) for v in list(row)[1:]])


def read_trace_csv(path) -> np.ndarray:
    from .completion import TRACE_DTYPE
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(str(exc)) from None
    if not rows or tuple(rows[0]) != TRACE_DTYPE.names:
        raise IoError(f"{path}: unexpected trace header")
    return np.array([(int(r[0]), *map(float, r[1:])) for r in rows[1:]], dtype=TRACE_DTYPE)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from None
    return path


def relpath(path, start: Optional[str]) -> str:
    return os.path.relpath(path, start) if start else path
