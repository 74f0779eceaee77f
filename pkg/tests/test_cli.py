import json
import subprocess
import sys

import pytest

from dedalus_opt.cli import main
from dedalus_opt.corpus import ROOT

PLANS = ROOT / "plans"
CONFIGS = ROOT / "configs"


def records(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


def test_check_listing(capsys):
    assert main(["check", str(ROOT / "listing2.dl")]) == 0
    rec = records(capsys)[-1]
    assert rec["ok"] and rec["rules"]["storage"] == ["sequential", "sequential", "synchronous", "synchronous", "asynchronous"]


def test_check_mixed_body_times(tmp_path, capsys):
    f = tmp_path / "bad.dl"
    f.write_text("@input a/3.\n@input b/3.\ncomponent c @ x {\n  h(v,l,t) :- a(v,l,t), b(v,l,s).\n}\n")
    assert main(["check", str(f)]) == 1
    assert any(r.get("violation") == "constraint-2" for r in records(capsys))


def test_check_syntax_error(tmp_path):
    f = tmp_path / "bad.dl"
    f.write_text("component c @ x { h(v,l,t) :- }")
    assert main(["check", str(f)]) == 1


def test_check_missing_file(tmp_path):
    assert main(["check", str(tmp_path / "missing.dl")]) == 2


def test_usage_error():
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_analyze_storage(capsys):
    assert main(["analyze", str(ROOT / "listing2.dl"), "--component", "storage"]) == 0
    recs = records(capsys)
    comp = [r for r in recs if r.get("component") == "storage"][0]
    assert comp["signature"]["referenced"] == ["collisions", "hashset", "numCollisions", "toStorage"]
    assert comp["state_machine"]["ok"]
    assert not comp["policy_cohash"]["ok"] and comp["policy_cd"]["ok"]
    assert "hashset: 1 -> 0 (hash)" in recs[0]["dependencies"]["fds"]


def test_analyze_split(capsys):
    assert main(["analyze", str(ROOT / "listing1.dl"), "--component", "leader", "--split", "3-8"]) == 0
    rec = records(capsys)[-1]
    assert rec["split"]["rules"] == [3, 4, 5, 6, 7, 8]
    assert rec["split"]["mutually_independent"]["ok"]


def test_analyze_all_components(capsys):
    assert main(["analyze", str(ROOT / "kvs.dl")]) == 0
    assert {r["component"] for r in records(capsys) if "component" in r} == {"leader", "storage"}


def test_analyze_unknown_component():
    assert main(["analyze", str(ROOT / "kvs.dl"), "--component", "nobody"]) == 2


@pytest.mark.parametrize(
    "name,components",
    [
        ("voting", {"broadcaster", "collector"}),
        ("twopc", {"requester", "committer", "ender", "participant", "acker"}),
        ("paxos", {"p2aProxy", "p2bProxy", "acceptor", "acoord"}),
    ],
)
def test_rewrite_emits_snapshots(tmp_path, capsys, name, components):
    assert main(["rewrite", "--plan", str(PLANS / f"{name}.plan.json"), "--out-dir", str(tmp_path)]) == 0
    recs = records(capsys)
    snaps = sorted(tmp_path.glob("*.dl"))
    assert snaps[0].name == "00-original.dl"
    assert len(snaps) == 1 + sum(r.get("result") == "applied" for r in recs)
    final = snaps[-1].read_text()
    for c in components:
        assert f"component {c} @" in final
    assert main(["check", str(snaps[-1])]) == 0


def test_rewrite_needs_plan():
    assert main(["rewrite", str(ROOT / "kvs.dl")]) == 2


def test_simulate_writes_history(tmp_path, capsys):
    args = ["simulate", "--config", str(CONFIGS / "voting.run.json"), "--seed", "4", "--out-dir", str(tmp_path)]
    assert main(args) == 0
    rec = records(capsys)[-1]
    assert rec["violations"] == [] and not rec["truncated"]
    first = (tmp_path / "history-seed4.txt").read_text()
    assert main(args) == 0
    assert (tmp_path / "history-seed4.txt").read_text() == first


def test_simulate_truncation_flag(tmp_path, capsys):
    assert main(["simulate", "--config", str(CONFIGS / "paxos.run.json"), "--horizon", "5", "--out-dir", str(tmp_path)]) == 0
    assert records(capsys)[-1]["truncated"]


def test_verify_identity(capsys):
    assert main(["verify", "--config", str(CONFIGS / "voting.run.json"), "--schedules", "3"]) == 0
    rec = records(capsys)[0]
    assert rec["target"] == "identity" and rec["result"] == "equivalent"


def test_verify_plan(capsys):
    assert main(["verify", "--config", str(CONFIGS / "voting.run.json"), "--plan", str(PLANS / "voting.plan.json"), "--schedules", "2"]) == 0
    assert all(r["result"] == "equivalent" for r in records(capsys) if "target" in r)


def test_verify_counterexample_exit_code(tmp_path, capsys):
    orig = ROOT / "toys" / "register.dl"
    bad = tmp_path / "bad.dl"
    # answers every request with 0, which the original never does for a second value
    bad.write_text(orig.read_text().replace("out(v,n,l',t') :- req(v,l,t), total(n,l,t),", "out(v,0,l',t') :- req(v,l,t), total(n,l,t),"))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"inputs": [["in", ["a"], "r1", 0], ["in", ["b"], "r1", 3]], "horizon": 40, "max_delay": 2}))
    rc = main(["verify", str(orig), str(bad), "--config", str(cfg), "--exact", "--out-dir", str(tmp_path)])
    assert rc == 1
    rec = records(capsys)[0]
    assert rec["result"] == "counterexample"
    assert json.loads(open(rec["bundle"]).read())["history"]


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "dedalus_opt.cli", "check", str(ROOT / "kvs.dl")], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout.splitlines()[-1])["ok"]
