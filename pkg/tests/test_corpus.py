import pytest

from dedalus_opt.corpus import PROTOCOLS, entry, load_program
from dedalus_opt.evaluator import History, HistoryRecord, Instance, RunResult
from dedalus_opt.evaluator import InputFact as I
from dedalus_opt.evaluator import SeededSchedule, run
from dedalus_opt.equivalence import observable
from dedalus_opt.invariants import CHECKS, paxos_safety, twopc_atomicity, voting_unanimity
from dedalus_opt.rewrites import desugar_seal


def fake(outputs=(), facts=()):
    recs = [HistoryRecord("out", rel, vals, "client", 0, 1) for rel, vals in outputs]
    inst = Instance()
    for rel, vals, loc in facts:
        inst.state.setdefault((loc, 0), {}).setdefault(rel, set()).add(vals)
    return RunResult(inst, History(recs, False, 1, 10))


# ---------------------------------------------------------------- invariant checkers


def test_paxos_checker_accepts_prefixes():
    res = fake([("executed", ("r1", 0, "a")), ("executed", ("r1", 1, "b")), ("executed", ("r2", 0, "a"))])
    assert paxos_safety(res) == []


@pytest.mark.parametrize(
    "outs",
    [
        [("executed", ("r1", 0, "a")), ("executed", ("r1", 0, "b"))],
        [("executed", ("r1", 0, "a")), ("executed", ("r2", 0, "b"))],
        [("executed", ("r1", 1, "a"))],
    ],
)
def test_paxos_checker_flags_violations(outs):
    assert paxos_safety(fake(outs))


def test_twopc_checker():
    logged = [("commitLogP", ("t0",), p) for p in ("p1", "p2", "p3")]
    assert twopc_atomicity(fake([("committed", ("t0",))], logged)) == []
    assert twopc_atomicity(fake([("committed", ("t0",)), ("aborted", ("t0",))], logged))
    assert twopc_atomicity(fake([("committed", ("t0",))], logged[:2]))
    assert twopc_atomicity(fake([("aborted", ("t0",))], logged[:1]))


def test_voting_checker():
    votes = [("vote", (p, "c0"), "ldr") for p in ("p1", "p2", "p3")]
    assert voting_unanimity(fake([("out", ("c0",))], votes)) == []
    assert voting_unanimity(fake([("out", ("c0",))], votes[:2]))
    assert voting_unanimity(fake([], votes))


# ---------------------------------------------------------------- protocol runs


def test_paxos_single_proposer_commits_three():
    p = desugar_seal(load_program("paxos.dl"))
    ins = [I("elect", (1,), "pr1", 0)] + [I("in", (f"c{i}",), "pr1", i) for i in range(1, 4)]
    res = run(p, ins, SeededSchedule(0, 3), 200)
    logs = {}
    for r in res.history.outputs():
        if r.rel == "executed":
            logs.setdefault(r.values[0], set()).add(r.values[1:])
    assert logs == {rep: {(0, "c1"), (1, "c2"), (2, "c3")} for rep in ("r1", "r2", "r3")}
    assert paxos_safety(res) == []


@pytest.mark.parametrize("name", ["voting", "twopc", "paxos"])
def test_protocol_runs_settle_and_satisfy_invariant(name):
    e = entry(name)
    c = e.config
    p = desugar_seal(e.program)
    for seed in range(3):
        res = run(p, c.inputs, SeededSchedule(seed, c.max_delay), c.horizon, output_relations=c.outputs)
        assert res.history.quiescent_at is not None
        assert CHECKS[c.invariant](res) == []


def test_twopc_aborts_the_rejected_transaction():
    e = entry("twopc")
    c = e.config
    res = run(desugar_seal(e.program), c.inputs, SeededSchedule(0, c.max_delay), c.horizon, output_relations=c.outputs)
    aborted = {r.values[0] for r in res.history.outputs() if r.rel == "aborted"}
    committed = {r.values[0] for r in res.history.outputs() if r.rel == "committed"}
    assert aborted == {"t4"}
    assert committed == {f"t{i}" for i in range(6)} - {"t4"}


def test_voting_acknowledges_every_command():
    e = entry("voting")
    c = e.config
    res = run(e.program, c.inputs, SeededSchedule(0, c.max_delay), c.horizon, output_relations=c.outputs)
    assert {r.values[0] for r in res.history.outputs()} == {f"cmd{i}" for i in range(8)}


@pytest.mark.parametrize("name", PROTOCOLS)
def test_unit_delay_content_is_seed_independent(name):
    e = entry(name)
    c = e.config
    p = desugar_seal(e.program)
    got = {
        observable(run(p, c.inputs, SeededSchedule(s, 1), c.horizon, output_relations=c.outputs).history, outputs=c.outputs).contents()
        for s in range(3)
    }
    assert len(got) == 1


def test_small_horizon_truncates():
    e = entry("paxos")
    c = e.config
    res = run(desugar_seal(e.program), c.inputs, SeededSchedule(0, c.max_delay), 6, output_relations=c.outputs)
    assert res.history.truncated
    assert res.history.quiescent_at is None


@pytest.mark.parametrize("name", PROTOCOLS)
def test_corpus_entries_are_consistent(name):
    e = entry(name)
    assert e.config.program == e.plan.program
    assert set(e.expected.values()) <= {"ok", "refused"}
