import copy
import csv
import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from branchkit import cli, io, pipeline
from branchkit.characterize import TraitRecord
from branchkit.errors import Divergence, InvalidParams
from branchkit.pipeline import (BranchSample, RunConfig, derive_seed, evaluate_pipeline, generate_samples,
                                load_manifest, split_counts)

# small clouds keep the end-to-end tests quick
FAST = {"complete_count": 2048, "partial_count": 1024, "render_resolution": 128,
        "completion": {"output_count": 2048, "steps": 8}}


def tree_hashes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def write_config(path, **extra):
    doc = copy.deepcopy(FAST)
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = write_config(root / "cfg.json")
    out = str(root / "run")
    assert cli.main(["generate", "--config", cfg, "--count", "4", "--seed", "7", "--out", out]) == 0
    return root, out, cfg


# -- splits and seeds ------------------------------------------------------------
def test_split_counts_table_rows():
    assert split_counts(1432, 0.8, "floor") == (1145, 287)
    assert split_counts(1432, 0.8, "round") == (1146, 286)
    assert split_counts(1432, 0.8, train_count=1136) == (1136, 296)
    RunConfig(count=1432, train_count=1136)


def test_split_counts_errors():
    with pytest.raises(InvalidParams):
        split_counts(10, 0.8, "ceil")
    with pytest.raises(InvalidParams):
        split_counts(10, 0.8, train_count=11)


def test_derive_seed_named_streams():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert len({derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(1, "a"), derive_seed(0, "a", 0)}) == 4


def test_adding_branches_keeps_earlier_ones():
    small = RunConfig(seed=2, count=3, **{k: v for k, v in FAST.items() if k != "completion"})
    big = RunConfig(seed=2, count=5, **{k: v for k, v in FAST.items() if k != "completion"})
    a = [s for s in generate_samples(small) if isinstance(s, BranchSample)]
    b = [s for s in generate_samples(big) if isinstance(s, BranchSample)]
    for x, y in zip(a, b):
        assert x.branch_id == y.branch_id
        assert np.array_equal(x.partial.points, y.partial.points)
        assert np.array_equal(x.complete.points, y.complete.points)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidParams):
        RunConfig.from_dict({"colour": 1})
    with pytest.raises(InvalidParams):
        RunConfig.from_dict({"completion": {"stepz": 3}})
    with pytest.raises(InvalidParams):
        RunConfig(partial_mode="xray")


def test_config_round_trip():
    cfg = RunConfig.from_dict(json.loads(json.dumps(RunConfig(seed=5, count=3).to_dict())))
    assert cfg == RunConfig(seed=5, count=3)


# -- generate ---------------------------------------------------------------------
def test_generate_manifest(dataset):
    _, out, _ = dataset
    m = load_manifest(os.path.join(out, "manifest.json"))
    assert len(m["entries"]) == 4
    assert m["split"] == {"train": 3, "test": 1}
    assert sorted(e["split"] for e in m["entries"]) == ["test", "train", "train", "train"]
    for e in m["entries"]:
        assert len(io.read_cloud(os.path.join(out, e["complete_path"]))) == 2048
        assert len(io.read_cloud(os.path.join(out, e["partial_path"]))) > 0
        io.branch_from_dict(io.read_json(os.path.join(out, e["skeleton_path"])))
        truth = io.read_json(os.path.join(out, e["truth_path"]))
        TraitRecord(e["branch_id"], truth["diameter_mm"], truth["angle_deg"], truth["length_cm"], truth["height_m"])
    for rel in m["trees"].values():
        io.tree_from_dict(io.read_json(os.path.join(out, rel)))


def test_generate_is_reproducible(dataset, tmp_path):
    _, out, cfg = dataset
    again = str(tmp_path / "again")
    assert cli.main(["generate", "--config", cfg, "--count", "4", "--seed", "7", "--out", again]) == 0
    assert tree_hashes(again) == tree_hashes(out)


def test_generate_seed_changes_output(dataset, tmp_path):
    _, out, cfg = dataset
    other = str(tmp_path / "other")
    assert cli.main(["generate", "--config", cfg, "--count", "4", "--seed", "8", "--out", other]) == 0
    assert tree_hashes(other) != tree_hashes(out)


# -- complete and evaluate -----------------------------------------------------------
@pytest.fixture(scope="module")
def completed(dataset):
    root, out, _ = dataset
    manifest = os.path.join(out, "manifest.json")
    assert cli.main(["complete", manifest]) == 0
    return manifest


def test_complete_summary(completed):
    root = os.path.dirname(completed)
    with open(os.path.join(root, "completed", "summary.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    for r in rows:
        assert np.isfinite(float(r["cd_l1_x1000_completed"])) and float(r["cd_l1_x1000_completed"]) > 0
        assert float(r["cd_l1_x1000_completed"]) < float(r["cd_l1_x1000_partial"])
    idx = io.read_json(os.path.join(root, "completion.json"))
    for paths in idx["entries"].values():
        trace = io.read_trace_csv(os.path.join(root, paths["trace_path"]))
        assert len(trace) == 9
        assert len(io.read_cloud(os.path.join(root, paths["completed_path"]))) == 2048


def test_complete_is_reproducible(completed, tmp_path):
    root = os.path.dirname(completed)
    assert cli.main(["complete", completed, "--out", str(tmp_path / "again")]) == 0
    first = {k: v for k, v in tree_hashes(os.path.join(root, "completed")).items()}
    assert tree_hashes(str(tmp_path / "again")) == first


def test_evaluate(completed, tmp_path, capsys):
    assert cli.main(["evaluate", completed, "--out", str(tmp_path / "ev")]) == 0
    text = capsys.readouterr().out
    assert "Branch diameter (MAE/RMSE in mm" in text and "Branch angle (MAE/RMSE in degree" in text
    with open(tmp_path / "ev" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["model"], r["trait"]) for r in rows] == [("Raw", "diameter"), ("Raw", "angle"),
                                                        ("Optimizer", "diameter"), ("Optimizer", "angle")]
    with open(tmp_path / "ev" / "flips.csv", newline="") as fh:
        flips = list(csv.DictReader(fh))
    assert 0 <= len(flips) <= 4
    assert any(f.endswith(".svg") for f in os.listdir(tmp_path / "ev" / "maps"))


def test_identical_inputs_give_identical_reports(dataset):
    _, out, _ = dataset
    m = load_manifest(os.path.join(out, "manifest.json"))
    swapped = copy.deepcopy(m)
    for e in swapped["entries"]:
        e["partial_path"] = e["complete_path"]
    assert evaluate_pipeline(swapped, "raw") == [
        pipeline.ReportRow("Raw", r.dataset, r.trait, r.report) for r in evaluate_pipeline(m, "complete")]


def test_completion_on_complete_clouds_changes_little(dataset):
    _, out, _ = dataset
    m = load_manifest(os.path.join(out, "manifest.json"))
    m = copy.deepcopy(m)
    for e in m["entries"]:
        e["partial_path"] = e["complete_path"]
    run = RunConfig.from_dict(m["config"])
    for e, (r, _) in zip(m["entries"], pipeline.branch_traits(m, "raw")):
        done = pipeline.complete_entry(m, e, run.completion, run.seed).completed
        c = pipeline.characterize_cloud(done, e, run)
        assert c.diameter == pytest.approx(r.diameter, rel=0.03)
        assert c.angle == pytest.approx(r.angle, abs=1.0)


def test_empty_manifest(tmp_path, capsys):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps({"version": 1, "config": RunConfig(count=0).to_dict(), "trees": {},
                             "split": {"train": 0, "test": 0}, "entries": []}))
    assert evaluate_pipeline(str(p)) == []
    assert cli.main(["evaluate", str(p)]) == 2
    assert cli.main(["complete", str(p)]) == 2


def test_bad_manifest_exit_code(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text("[1, 2]")
    assert cli.main(["evaluate", str(p)]) == 2
    assert cli.main(["complete", str(tmp_path / "missing.json")]) == 2


# -- single-file commands ---------------------------------------------------------
def test_single_cloud_commands(dataset, tmp_path, capsys):
    _, out, _ = dataset
    m = load_manifest(os.path.join(out, "manifest.json"))
    e = m["entries"][0]
    complete = os.path.join(out, e["complete_path"])
    partial = str(tmp_path / "p.xyz")
    assert cli.main(["corrupt", complete, "--seed", "3", "--out", partial, "--noise", "0.001"]) == 0
    assert 0 < len(io.read_cloud(partial)) < 2048
    base = ",".join(map(str, e["params"]["base_point"]))
    assert cli.main(["characterize", complete, "--base", base, "--out", str(tmp_path / "t.json")]) == 0
    traits = io.read_json(tmp_path / "t.json")
    truth = io.read_json(os.path.join(out, e["truth_path"]))
    assert traits["diameter_mm"] == pytest.approx(truth["diameter_mm"], rel=0.05)
    cfg = write_config(tmp_path / "c.json")
    assert cli.main(["complete", partial, "--config", cfg, "--base", base, "--format", "xyz",
                     "--out", str(tmp_path / "done")]) == 0
    assert len(io.read_cloud(tmp_path / "done" / "completed.xyz")) == 2048
    skel = str(tmp_path / "done" / "skeleton.json")
    assert cli.main(["complete", partial, "--config", cfg, "--skeleton", skel, "--gt-skeleton", skel,
                     "--out", str(tmp_path / "done2")]) == 0
    capsys.readouterr()
    assert cli.main(["loss-eval", partial, complete]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("value ") and float(lines[0].split()[1]) > 0
    assert cli.main(["loss-eval", partial, complete, "--loss", "repulsion", "--k", "4"]) == 0


def test_prune_command(tmp_path, capsys):
    p = tmp_path / "traits.csv"
    p.write_text("branch_id,diameter,angle,length,attachment_height\n"
                 "a,25,40,30,1.0\nb,30,50,30,0.5\nc,22,60,30,2.0\nd,10,60,50,1.5\n")
    assert cli.main(["prune", str(p), "--out", str(tmp_path / "pr")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["a: Remove #3", "b: Remove #1", "c: Remove #2", "d: Shorten to 45 cm"]
    plan = io.read_json(tmp_path / "pr" / "plan.json")
    assert plan["thresholds"] == {"diameter_cutoff_cm": 2.0, "length_cutoff_cm": 45.0}
    assert cli.main(["prune", str(p), "--length-cutoff-cm", "60", "--out", str(tmp_path / "pr2")]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "d: Keep"


def test_prune_bad_csv(tmp_path):
    p = tmp_path / "traits.csv"
    p.write_text("branch_id,diameter\na,25\n")
    assert cli.main(["prune", str(p)]) == 2


def test_numerical_failure_exit_code(monkeypatch, tmp_path):
    def boom(args):
        raise Divergence("non-finite loss")
    monkeypatch.setitem(cli.COMMANDS, "loss-eval", boom)
    assert cli.main(["loss-eval", "a", "b"]) == 3


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "branchkit.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("generate", "corrupt", "complete", "characterize", "prune", "evaluate", "loss-eval"):
        assert sub in r.stdout
