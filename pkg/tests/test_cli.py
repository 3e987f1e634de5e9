from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from handover_sim import __version__
from handover_sim.cli import load_config, main


def run(*args):
    return main([str(a) for a in args])


def test_simulate_writes_traces_and_summary(tmp_path, capsys):
    cfg = tmp_path / "default.json"
    cfg.write_text("{}")
    assert run("simulate", "--config", cfg, "--episodes", 13, "--out", tmp_path / "o") == 0
    files = sorted((tmp_path / "o").glob("trace_*.jsonl"))
    assert len(files) == 13
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert "full_assembly" in summary["modes"]["vision"]
    assert "full assembly" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--seed", 42, "--episodes", 3, "--out", tmp_path / d) == 0
    a = {p.name: p.read_bytes() for p in (tmp_path / "a").iterdir()}
    b = {p.name: p.read_bytes() for p in (tmp_path / "b").iterdir()}
    assert a == b and len(a) == 4


def test_simulate_paired_shares_seeds(tmp_path):
    assert run("simulate", "--mode", "voice", "--paired", "--episodes", 2, "--out", tmp_path) == 0
    names = sorted(p.name for p in tmp_path.glob("trace_*.jsonl"))
    assert names == ["trace_vision_000000.jsonl", "trace_vision_000001.jsonl",
                     "trace_voice_000000.jsonl", "trace_voice_000001.jsonl"]


def test_unknown_config_key_exits_2(tmp_path, capsys):
    assert run("simulate", "--set", "human.p_retyr=0.5", "--out", tmp_path) == 2
    assert "human.p_retyr" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2
    assert run("simulate", "--config", tmp_path / "missing.json") == 2


def test_experiment_block_in_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": "handover", "legs": 1,
                               "experiment": {"repetitions": 2, "seed_base": 5, "out_dir": str(tmp_path / "x")}}))
    episode, exp = load_config(str(cfg))
    assert episode.task == "handover" and exp.repetitions == 2
    assert run("simulate", "--config", cfg) == 0
    assert sorted(p.name for p in (tmp_path / "x").glob("*.jsonl")) == [
        "trace_vision_000005.jsonl", "trace_vision_000006.jsonl"]


def test_metrics_on_oracle_trace(tmp_path):
    out = tmp_path / "t"
    assert run("simulate", "--set", "servo.sigma_value=0", "--set", "servo.sigma_control=0",
               "--set", "servo.p_mech=1", "--set", "human.atypical_probability=0",
               "--set", f"recognizer.confusion={json.dumps([[float(i == j) for j in range(8)] for i in range(8)])}",
               "--episodes", 1, "--out", out) == 0
    assert run("metrics", out, "--out", tmp_path / "m.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == 4 and all(r["succeeded"] == "true" for r in rows)


def test_metrics_empty_directory_fails(tmp_path, capsys):
    assert run("metrics", tmp_path) == 1
    assert "no trace files" in capsys.readouterr().err


def test_metrics_skips_unreadable_files(tmp_path, capsys):
    run("simulate", "--episodes", 1, "--out", tmp_path)
    (tmp_path / "junk.jsonl").write_text("not a trace\n")
    assert run("metrics", tmp_path, "--out", tmp_path / "m.csv") == 0
    assert "skipping" in capsys.readouterr().err


def test_stats_identical_files_undefined(tmp_path, capsys):
    run("simulate", "--episodes", 3, "--out", tmp_path)
    run("metrics", tmp_path, "--out", tmp_path / "m.csv")
    assert run("stats", tmp_path / "m.csv", tmp_path / "m.csv", "--out", tmp_path / "s.json") == 0
    rep = json.loads((tmp_path / "s.json").read_text())
    assert rep["wilcoxon"]["handover_time_s"]["method"] == "undefined"
    assert rep["wilcoxon"]["cycle_time_s"]["p_two_sided"] is None


def test_stats_paired_vision_voice(tmp_path, capsys):
    run("simulate", "--paired", "--episodes", 6, "--set", "task=handover", "--set", "legs=1", "--out", tmp_path)
    run("metrics", *sorted(tmp_path.glob("trace_vision_*")), "--out", tmp_path / "v.csv")
    run("metrics", *sorted(tmp_path.glob("trace_voice_*")), "--out", tmp_path / "c.csv")
    capsys.readouterr()
    assert run("stats", tmp_path / "v.csv", tmp_path / "c.csv") == 0
    rep = json.loads(capsys.readouterr().out)
    w = rep["wilcoxon"]["handover_time_s"]
    assert w["method"] == "exact" and w["n_pairs"] >= 4


def test_stats_likert(tmp_path, capsys):
    p = tmp_path / "q.csv"
    lines = ["participant,item,rating,mode"]
    ratings = [[6, 5, 6, 2, 5], [4, 4, 5, 4, 4], [7, 6, 6, 1, 7], [3, 4, 3, 5, 3], [5, 5, 6, 3, 6]]
    items = ["fluency", "ease_of_use", "trust", "comfort", "capability"]
    for i, row in enumerate(ratings):
        lines += [f"p{i},{it},{r},vision" for it, r in zip(items, row)]
    p.write_text("\n".join(lines) + "\n")
    assert run("stats", "--likert", p) == 0
    rep = json.loads(capsys.readouterr().out)["likert"]["vision"]
    assert rep["alpha"] is not None and len(rep["alpha_if_deleted"]) == 5
    assert rep["item_medians"]["comfort"] == 5  # reversed: 8 - 3


def test_stats_needs_input(capsys):
    assert run("stats") == 2
    assert run("stats", "only_one.csv") == 2


def test_report(tmp_path, capsys):
    run("simulate", "--episodes", 4, "--out", tmp_path)
    assert run("report", tmp_path) == 0
    out = capsys.readouterr().out
    assert "== vision: 4 episodes" in out and "cycle rate ^ 4" in out


def test_version_and_module_entry():
    res = subprocess.run([sys.executable, "-m", "handover_sim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout and "trace schema 1" in res.stdout
    with pytest.raises(SystemExit):
        main(["frobnicate"])
