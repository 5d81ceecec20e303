"""Branch trait estimation and error scoring."""
import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .completion import CIRCLE_FITS, plane_basis
from .errors import DegenerateSkeleton, InvalidParams, LengthMismatch, TooSparse, ZeroGroundTruth
from .synth_gen.truth import DEFAULT_OFFSET, DEFAULT_WINDOW, angle_between, line_direction
from .synth_gen.types import Skeleton, as_points


@dataclass
class TraitRecord:
    branch_id: str
    diameter: float  # mm
    angle: float  # degrees
    length: float  # cm
    attachment_height: float  # m

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("diameter must be > 0")
        if not 0.0 <= self.angle <= 180.0:
            raise ValueError("angle must be in [0, 180]")
        if not self.length > 0:
            raise ValueError("length must be > 0")


@dataclass
class ErrorReport:
    mae: float
    mape: float
    rmse: float
    n: int


def measure_diameter(branch_cloud, skeleton: Skeleton, offset: float = DEFAULT_OFFSET,
                     min_points: int = 8, circle_fit: str = "kasa") -> float:
    """Diameter in millimetres from a circle fit to one cross-section slice.

    The slice is centred ``offset`` metres of skeleton arc-length from the
    base, spans twice the local skeleton radius along the local axis and is
    limited laterally to three radii, so neighbouring parts of a curved
    branch do not leak in.
    """
    pts = as_points(branch_cloud)
    if offset < 0 or offset >= skeleton.length:
        raise DegenerateSkeleton(f"offset {offset} outside skeleton length {skeleton.length:.4g}")
    c = skeleton.point_at(offset)
    t = _local_axis(skeleton, offset)
    r = float(skeleton.radius_at(offset))
    rel = pts - c
    along = rel @ t
    lateral = rel - along[:, None] * t
    sel = (np.abs(along) <= r) & (np.sum(lateral * lateral, axis=1) <= (3 * r) ** 2)
    if sel.sum() < min_points:
        raise TooSparse(f"slice holds {int(sel.sum())} points, need {min_points}")
    e1, e2 = plane_basis(t)
    xy = np.column_stack([lateral[sel] @ e1, lateral[sel] @ e2])
    if circle_fit not in CIRCLE_FITS:
        raise InvalidParams(f"unknown circle fit {circle_fit!r}")
    _, radius = CIRCLE_FITS[circle_fit](xy)
    return 2000.0 * radius


def _local_axis(skeleton: Skeleton, s: float, half: Optional[float] = None) -> np.ndarray:
    """Skeleton direction around ``s`` from a chord over +-``half`` (default: one radius)."""
    h = half if half is not None else max(float(skeleton.radius_at(s)), 1e-6)
    a = skeleton.point_at(max(0.0, s - h))
    b = skeleton.point_at(min(skeleton.length, s + h))
    d = b - a
    return d / np.linalg.norm(d)


def measure_angle(branch_skeleton: Skeleton, trunk_axis, junction_window: float = DEFAULT_WINDOW) -> float:
    """Angle in degrees between the branch's initial direction and the trunk axis.

    The branch direction is the least-squares line through the skeleton
    polyline over the first ``junction_window`` metres, oriented base to tip.
    """
    if branch_skeleton.length <= junction_window:
        raise DegenerateSkeleton("skeleton shorter than the junction window")
    axis = np.asarray(trunk_axis, dtype=np.float64)
    if not np.linalg.norm(axis) > 0:
        raise DegenerateSkeleton("trunk axis must be non-zero")
    s = np.linspace(0.0, junction_window, 101)
    d = line_direction(branch_skeleton.point_at(s))
    return angle_between(d, axis)


def measure_length(skeleton: Skeleton) -> float:
    """Polyline arc-length in centimetres."""
    return 100.0 * skeleton.length


def error_metrics(estimates: Sequence[float], ground_truth: Sequence[float]) -> ErrorReport:
    e = np.asarray(estimates, dtype=np.float64).reshape(-1)
    g = np.asarray(ground_truth, dtype=np.float64).reshape(-1)
    if len(e) != len(g) or len(e) == 0:
        raise LengthMismatch(f"got {len(e)} estimates for {len(g)} ground-truth values")
    if np.any(g == 0):
        raise ZeroGroundTruth("MAPE undefined for zero ground truth")
    err = e - g
    return ErrorReport(
        mae=float(np.mean(np.abs(err))),
        mape=float(100.0 * np.mean(np.abs(err) / np.abs(g))),
        rmse=float(np.sqrt(np.mean(err * err))),
        n=int(len(e)),
    )


def characterize_branch(cloud, skeleton: Skeleton, trunk_axis=(0.0, 0.0, 1.0), height: float = 0.0,
                        branch_id: str = "", offset: float = DEFAULT_OFFSET,
                        window: float = DEFAULT_WINDOW) -> TraitRecord:
    return TraitRecord(
        branch_id=str(branch_id),
        diameter=measure_diameter(cloud, skeleton, offset),
        angle=measure_angle(skeleton, trunk_axis, window),
        length=measure_length(skeleton),
        attachment_height=float(height),
    )


# -- reports -----------------------------------------------------------------------
TRAIT_UNITS = {"diameter": "mm", "angle": "degree"}
REPORT_COLUMNS = ["model", "dataset", "trait", "MAE", "MAPE", "RMSE", "n"]


@dataclass
class ReportRow:
    model: str
    dataset: str
    trait: str
    report: ErrorReport

    def as_dict(self):
        return {"model": self.model, "dataset": self.dataset, "trait": self.trait,
                "MAE": self.report.mae, "MAPE": self.report.mape, "RMSE": self.report.rmse,
                "n": self.report.n}


def report_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        d = row.as_dict()
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in d.items()})
    return buf.getvalue()


def report_table(rows: Sequence[ReportRow]) -> str:
    """Fixed-width text table, one block per trait, MAE/RMSE in trait units."""
    lines = []
    for trait in ("diameter", "angle"):
        block = [r for r in rows if r.trait == trait]
        if not block:
            continue
        unit = TRAIT_UNITS[trait]
        lines.append(f"Branch {trait} (MAE/RMSE in {unit}, MAPE in %)")
        lines.append(f"{'model':<16}{'dataset':<12}{'MAE':>10}{'MAPE':>10}{'RMSE':>10}{'n':>6}")
        for r in block:
            lines.append(f"{r.model:<16}{r.dataset:<12}{r.report.mae:>10.3f}{r.report.mape:>10.2f}"
                         f"{r.report.rmse:>10.3f}{r.report.n:>6d}")
        lines.append("")
    return "\n".join(lines)
