"""Global pruning rules and pruning-map output."""
import json
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .errors import DuplicateBranchId, InvalidParams, UnknownBranchId

REMOVE = "Remove"
SHORTEN = "Shorten"
KEEP = "Keep"
DIAMETER_RULE = "DiameterRule"
LENGTH_RULE = "LengthRule"

ACTION_COLORS = {REMOVE: "#d62728", SHORTEN: "#ff7f0e", KEEP: "#2ca02c"}


@dataclass(frozen=True)
class PruneDecision:
    branch_id: str
    action: str
    rule: Optional[str] = None
    order: Optional[int] = None
    to_length_cm: Optional[float] = None

    def as_dict(self):
        return {"branch_id": self.branch_id, "action": self.action, "rule": self.rule,
                "order": self.order, "to_length_cm": self.to_length_cm}


@dataclass
class PruningPlan:
    decisions: List[PruneDecision]
    diameter_cutoff_cm: float = 2.0
    length_cutoff_cm: float = 45.0

    def by_id(self) -> Dict[str, PruneDecision]:
        return {d.branch_id: d for d in self.decisions}

    def removal_order(self) -> List[str]:
        rem = sorted((d for d in self.decisions if d.action == REMOVE), key=lambda d: d.order)
        return [d.branch_id for d in rem]

    def to_dict(self):
        return {"thresholds": {"diameter_cutoff_cm": self.diameter_cutoff_cm,
                               "length_cutoff_cm": self.length_cutoff_cm},
                "decisions": [d.as_dict() for d in self.decisions]}

    @classmethod
    def from_dict(cls, data) -> "PruningPlan":
        th = data["thresholds"]
        decisions = [PruneDecision(**d) for d in data["decisions"]]
        return cls(decisions, th["diameter_cutoff_cm"], th["length_cutoff_cm"])


def plan_pruning(traits, diameter_cutoff: float = 2.0, length_cutoff: float = 45.0) -> PruningPlan:
    """Apply the diameter and length rules to per-branch traits.

    Branches thicker than ``diameter_cutoff`` cm (strictly) are removed: the
    thickest first, then the rest from the highest attachment down, ties by
    branch id. Of the remaining branches, those longer than
    ``length_cutoff`` cm are shortened to the cutoff; the rest are kept.
    Output follows the input order.
    """
    traits = list(traits)
    if not traits:
        raise InvalidParams("no traits given")
    ids = [t.branch_id for t in traits]
    if len(set(ids)) != len(ids):
        raise DuplicateBranchId("branch ids must be unique")
    cutoff_mm = 10.0 * diameter_cutoff
    targets = [t for t in traits if t.diameter > cutoff_mm]
    order = {}
    if targets:
        first = min(targets, key=lambda t: (-t.diameter, t.branch_id))
        rest = sorted((t for t in targets if t is not first), key=lambda t: (-t.attachment_height, t.branch_id))
        for k, t in enumerate([first] + rest, start=1):
            order[t.branch_id] = k
    decisions = []
    for t in traits:
        if t.branch_id in order:
            decisions.append(PruneDecision(t.branch_id, REMOVE, DIAMETER_RULE, order[t.branch_id]))
        elif t.length > length_cutoff:
            decisions.append(PruneDecision(t.branch_id, SHORTEN, LENGTH_RULE, None, float(length_cutoff)))
        else:
            decisions.append(PruneDecision(t.branch_id, KEEP))
    return PruningPlan(decisions, float(diameter_cutoff), float(length_cutoff))


def decision_flips(a: PruningPlan, b: PruningPlan) -> List[str]:
    """Branch ids whose action differs between two plans over the same branches."""
    da, db = a.by_id(), b.by_id()
    return sorted(k for k in da if k in db and da[k].action != db[k].action)


def _side_view(tree, plan_ids, samples=60):
    """x-z polylines for the trunk and planned branches."""
    lines = {"trunk": tree.trunk.centerline(np.linspace(0.0, tree.trunk.length, samples))[:, [0, 2]]}
    known = {m.id: m for m, _ in tree.branches}
    for bid in plan_ids:
        if bid not in known:
            raise UnknownBranchId(bid)
        m = known[bid]
        lines[bid] = m.centerline(np.linspace(0.0, m.length, samples))[:, [0, 2]]
    return lines


def pruning_map(plan: PruningPlan, tree) -> dict:
    """Machine-readable pruning map: the plan plus side-view branch geometry."""
    lines = _side_view(tree, [d.branch_id for d in plan.decisions])
    doc = plan.to_dict()
    doc["geometry"] = {k: np.round(v, 6).tolist() for k, v in lines.items()}
    doc["legend"] = [{"order": k, "branch_id": bid} for k, bid in enumerate(plan.removal_order(), start=1)]
    return doc


def render_svg(doc: dict, width: int = 480, height: int = 640, margin: int = 40) -> str:
    geom = {k: np.asarray(v) for k, v in doc["geometry"].items()}
    allp = np.vstack(list(geom.values()))
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    sc = min(width - 2 * margin, height - 2 * margin) / span

    def xy(p):
        return margin + (p[0] - lo[0]) * sc, height - margin - (p[1] - lo[1]) * sc

    decisions = {d["branch_id"]: d for d in doc["decisions"]}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for bid, pts in geom.items():
        if bid == "trunk":
            color, action, w = "#6b4e2e", "Trunk", 6
        else:
            action = decisions[bid]["action"]
            color, w = ACTION_COLORS[action], 3
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(xy, pts))
        out.append(f'<polyline class="branch" data-id="{bid}" data-action="{action}" points="{path}" '
                   f'fill="none" stroke="{color}" stroke-width="{w}"/>')
    for bid, d in decisions.items():
        if d["action"] == REMOVE:
            x, y = xy(geom[bid][len(geom[bid]) // 2])
            out.append(f'<text class="order-label" data-id="{bid}" x="{x:.2f}" y="{y:.2f}" '
                       f'font-size="14" fill="{ACTION_COLORS[REMOVE]}">{d["order"]}</text>')
    for k, item in enumerate(doc["legend"]):
        out.append(f'<text class="legend" data-order="{item["order"]}" x="{width - 150}" y="{20 + 16 * k}" '
                   f'font-size="12">{item["order"]}: remove {item["branch_id"]}</text>')
    out.append("</svg>")
    return "\n".join(out)


def emit_pruning_map(plan: PruningPlan, tree, svg_path=None, json_path=None):
    """Write the pruning map as SVG and JSON; returns ``(svg_text, json_text)``."""
    doc = pruning_map(plan, tree)
    svg = render_svg(doc)
    text = json.dumps(doc, indent=2)
    if svg_path is not None:
        with open(svg_path, "w") as fh:
            fh.write(svg)
    if json_path is not None:
        with open(json_path, "w") as fh:
            fh.write(text)
    return svg, text


def parse_pruning_map(text: str) -> PruningPlan:
    return PruningPlan.from_dict(json.loads(text))
