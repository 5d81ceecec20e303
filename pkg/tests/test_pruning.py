import json
import re
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from branchkit.characterize import TraitRecord
from branchkit.errors import DuplicateBranchId, InvalidParams, UnknownBranchId
from branchkit.pruning import (KEEP, REMOVE, SHORTEN, PruneDecision, PruningPlan, decision_flips,
                               emit_pruning_map, parse_pruning_map, plan_pruning, pruning_map)
from branchkit.synth_gen import random_fb_tree

SVG = "{http://www.w3.org/2000/svg}"


def rec(bid, diameter, height, length=30.0, angle=45.0):
    return TraitRecord(bid, float(diameter), float(angle), float(length), float(height))


def brute_force_plan(traits, dcut_cm=2.0, lcut_cm=45.0):
    """Step-by-step reading of the rules: repeatedly take the next target
    by scanning every remaining one, no sorting."""
    targets = [t for t in traits if t.diameter > 10 * dcut_cm]
    order = {}
    remaining = list(targets)
    step = 1
    while remaining:
        best = remaining[0]
        for t in remaining[1:]:
            if step == 1:
                better = t.diameter > best.diameter or (t.diameter == best.diameter and t.branch_id < best.branch_id)
            else:
                better = (t.attachment_height > best.attachment_height
                          or (t.attachment_height == best.attachment_height and t.branch_id < best.branch_id))
            if better:
                best = t
        order[best.branch_id] = step
        remaining = [t for t in remaining if t is not best]
        step += 1
    out = {}
    for t in traits:
        if t.branch_id in order:
            out[t.branch_id] = (REMOVE, order[t.branch_id], None)
        elif t.length > lcut_cm:
            out[t.branch_id] = (SHORTEN, None, lcut_cm)
        else:
            out[t.branch_id] = (KEEP, None, None)
    return out


def as_tuples(plan):
    return {d.branch_id: (d.action, d.order, d.to_length_cm) for d in plan.decisions}


def check_invariants(plan, traits):
    assert [d.branch_id for d in plan.decisions] == [t.branch_id for t in traits]
    orders = sorted(d.order for d in plan.decisions if d.action == REMOVE)
    assert orders == list(range(1, len(orders) + 1))
    for d in plan.decisions:
        if d.action != REMOVE:
            assert d.order is None
        if d.action == SHORTEN:
            assert d.to_length_cm == plan.length_cutoff_cm


# -- rules ------------------------------------------------------------------------
def test_three_branch_example():
    traits = [rec("a", 25, 1.0), rec("b", 30, 0.5), rec("c", 22, 2.0)]
    plan = plan_pruning(traits)
    assert plan.removal_order() == ["b", "c", "a"]
    check_invariants(plan, traits)
    assert as_tuples(plan) == brute_force_plan(traits)


def test_all_keep():
    traits = [rec("a", 15, 1.0, 40), rec("b", 20, 0.5, 45), rec("c", 5, 2.0, 10)]
    plan = plan_pruning(traits)
    assert all(d.action == KEEP for d in plan.decisions)


def test_cutoff_is_strict():
    plan = plan_pruning([rec("a", 20.0, 1.0)])
    assert plan.decisions[0].action == KEEP
    plan = plan_pruning([rec("a", 20.0 + 1e-9, 1.0)])
    assert plan.decisions[0].action == REMOVE


def test_length_rule_and_remove_supersedes_shorten():
    plan = plan_pruning([rec("long", 10, 1.0, 60), rec("both", 30, 1.0, 60), rec("edge", 10, 1.0, 45)])
    d = plan.by_id()
    assert d["long"].action == SHORTEN and d["long"].to_length_cm == 45.0
    assert d["both"].action == REMOVE
    assert d["edge"].action == KEEP


def test_custom_cutoffs():
    plan = plan_pruning([rec("a", 18, 1.0, 42)], diameter_cutoff=1.5, length_cutoff=40)
    assert plan.decisions[0].action == REMOVE
    plan = plan_pruning([rec("a", 12, 1.0, 42)], diameter_cutoff=1.5, length_cutoff=40)
    assert plan.decisions[0].action == SHORTEN and plan.decisions[0].to_length_cm == 40


def test_ties_broken_by_id():
    traits = [rec("z", 30, 1.0), rec("y", 30, 1.0), rec("x", 25, 1.0), rec("w", 25, 1.0)]
    assert plan_pruning(traits).removal_order() == ["y", "w", "x", "z"]


def test_errors():
    with pytest.raises(DuplicateBranchId):
        plan_pruning([rec("a", 10, 1), rec("a", 12, 1)])
    with pytest.raises(InvalidParams):
        plan_pruning([])


trait_sets = st.lists(
    st.tuples(st.integers(5, 40), st.integers(0, 8), st.integers(10, 80)),
    min_size=1, max_size=12,
).map(lambda rows: [rec(f"b{i:02d}", d, h / 4, length) for i, (d, h, length) in enumerate(rows)])


@settings(max_examples=200, deadline=None)
@given(trait_sets, st.permutations(range(12)))
def test_random_sets_match_brute_force(traits, perm):
    # shuffle input order; the plan must not depend on it beyond output order
    order = [p for p in perm if p < len(traits)]
    traits = [traits[p] for p in order]
    plan = plan_pruning(traits)
    check_invariants(plan, traits)
    assert as_tuples(plan) == brute_force_plan(traits)
    assert plan_pruning(traits) == plan


@settings(max_examples=100, deadline=None)
@given(trait_sets, st.data())
def test_diameter_monotonicity(traits, data):
    i = data.draw(st.integers(0, len(traits) - 1))
    bump = data.draw(st.floats(0.0, 50.0))
    before = plan_pruning(traits).decisions[i].action
    grown = list(traits)
    grown[i] = replace(traits[i], diameter=traits[i].diameter + bump)
    after = plan_pruning(grown).decisions[i].action
    if before == REMOVE:
        assert after == REMOVE


def test_decision_flips():
    a = plan_pruning([rec("a", 25, 1.0), rec("b", 10, 1.0)])
    b = plan_pruning([rec("a", 15, 1.0), rec("b", 10, 1.0)])
    assert decision_flips(a, b) == ["a"]
    assert decision_flips(a, a) == []


# -- map ----------------------------------------------------------------------------
@pytest.fixture(scope="module")
def tree():
    return random_fb_tree(0, n_branches=3)


def test_map_without_removals_has_no_labels(tree, tmp_path):
    plan = plan_pruning([rec("b000", 10, 1.0), rec("b001", 12, 0.8, 60), rec("b002", 5, 0.5)])
    svg, _ = emit_pruning_map(plan, tree, tmp_path / "m.svg", tmp_path / "m.json")
    root = ET.fromstring(svg)
    labels = [t for t in root.iter(SVG + "text") if t.get("class") == "order-label"]
    assert labels == []
    assert (tmp_path / "m.svg").read_text() == svg
    actions = {p.get("data-id"): p.get("data-action") for p in root.iter(SVG + "polyline")}
    assert actions == {"trunk": "Trunk", "b000": KEEP, "b001": SHORTEN, "b002": KEEP}


def test_map_json_round_trip(tree, tmp_path):
    plan = plan_pruning([rec("b000", 25, 1.0), rec("b001", 30, 0.8, 60), rec("b002", 22, 1.2)])
    _, text = emit_pruning_map(plan, tree, None, tmp_path / "m.json")
    assert parse_pruning_map(text) == plan
    assert parse_pruning_map((tmp_path / "m.json").read_text()) == plan


def test_map_labels_and_legend_in_order(tree):
    plan = plan_pruning([rec("b000", 25, 1.0), rec("b001", 30, 0.8), rec("b002", 22, 1.2)])
    svg, text = emit_pruning_map(plan, tree)
    root = ET.fromstring(svg)
    labels = {t.get("data-id"): int(t.text) for t in root.iter(SVG + "text") if t.get("class") == "order-label"}
    assert labels == {"b001": 1, "b002": 2, "b000": 3}
    legend = [t for t in root.iter(SVG + "text") if t.get("class") == "legend"]
    ys = [float(t.get("y")) for t in legend]
    assert [int(t.get("data-order")) for t in legend] == [1, 2, 3]
    assert ys == sorted(ys)
    assert [re.search(r"remove (\S+)", t.text).group(1) for t in legend] == ["b001", "b002", "b000"]
    doc = json.loads(text)
    assert [x["branch_id"] for x in doc["legend"]] == ["b001", "b002", "b000"]


def test_map_unknown_branch(tree):
    plan = PruningPlan([PruneDecision("nope", KEEP)])
    with pytest.raises(UnknownBranchId):
        pruning_map(plan, tree)
