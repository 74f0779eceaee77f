import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dedalus_opt.corpus import entry, load_program
from dedalus_opt.equivalence import (
    LimitExceeded,
    NotConfluent,
    ReplayError,
    can_produce,
    check_eventual,
    check_exact,
    dumps,
    observable,
    replay,
)
from dedalus_opt.evaluator import InputFact as I
from dedalus_opt.evaluator import SeededSchedule, run
from dedalus_opt.parser import parse_program
from dedalus_opt.plan import apply_plan

from controls import HARNESS_CONTROLS, unbatched_register, value_keyed_storage
from dedalus_opt.rewrites import desugar_seal

# ---------------------------------------------------------------- matching oracle


def brute_can_produce(sends, arrivals):
    """Some map from sends onto arrivals with every send strictly before its arrival."""
    ts = sorted(set(arrivals))
    if not ts or not sends:
        return False
    for f in itertools.product(ts, repeat=len(sends)):
        if all(s < t for s, t in zip(sends, f)) and set(f) == set(ts):
            return True
    return False


@given(st.sets(st.integers(0, 8), max_size=5), st.sets(st.integers(1, 10), max_size=5))
def test_can_produce_matches_brute_force(sends, arrivals):
    assert can_produce(sorted(sends), sorted(arrivals), False) == brute_can_produce(sorted(sends), sorted(arrivals))


# ---------------------------------------------------------------- identity and timing

HOPS = """
@input in/3.
@edb peer/1.
@edb client/1.
@client in, out.
peer(y).
client(c).
component a @ x {
  mid(v,l',t') :- in(v,l,t), peer(l'), delay((v,l,t,l'),t').
}
component b @ y {
  out(v,l',t') :- mid(v,l,t), client(l'), delay((v,l,t,l'),t').
}
"""

DIRECT = """
@input in/3.
@edb client/1.
@client in, out.
client(c).
component a @ x {
  out(v,l',t') :- in(v,l,t), client(l'), delay((v,l,t,l'),t').
}
"""

INS = [I("in", ("a",), "x", 0), I("in", ("b",), "x", 0), I("in", ("c",), "x", 1)]


def test_identity_is_equivalent():
    p = parse_program(HOPS)
    v = check_exact(p, p, INS, 2, 20)
    assert v.equivalent and v.stats["exhaustive"]
    assert check_eventual(p, p, INS, 10, 3, 20).equivalent


def test_slower_rewrite_is_equivalent():
    # every extra hop can be matched by a longer client-bound delay in the original
    assert check_exact(parse_program(DIRECT), parse_program(HOPS), INS, 2, 20).equivalent


def test_faster_rewrite_is_a_timing_counterexample():
    v = check_exact(parse_program(HOPS), parse_program(DIRECT), INS, 2, 20)
    assert not v.equivalent
    assert "timing" in v.counterexample["differing"]
    assert check_eventual(parse_program(HOPS), parse_program(DIRECT), INS, 10, 2, 20).equivalent


def test_limit_exceeded():
    p = parse_program(HOPS)
    with pytest.raises(LimitExceeded):
        check_exact(p, p, INS, 3, 20, limit=5)


def test_non_confluent_original_is_reported():
    sn = desugar_seal(load_program("toys/snapshot.dl"))
    ins = [I("in", ("x", 10), "g1", 0), I("in", ("y", 20), "g1", 0), I("snap", (1,), "g1", 1)]
    with pytest.raises(NotConfluent):
        check_eventual(sn, sn, ins, 20, 2, 80)


def test_observable_keeps_send_and_arrival_times():
    p = parse_program(HOPS)
    h = run(p, INS, SeededSchedule(0, 1), 20).history
    o = observable(h, outputs={"out"})
    assert {x[3] for x in o.inputs} == {0, 1}
    assert {(x[1], x[3]) for x in o.outputs} == {(("a",), 2), (("b",), 2), (("c",), 3)}


# ---------------------------------------------------------------- negative controls past the gate


@pytest.mark.parametrize("name", sorted(HARNESS_CONTROLS))
def test_harness_catches_forced_rewrite(name):
    orig, rew, ins, horizon, omd = HARNESS_CONTROLS[name]()
    v = check_exact(orig, rew, ins, 2, horizon, original_max_delay=omd)
    assert not v.equivalent
    cx = v.counterexample
    assert cx["schedule"]["mode"] == "exhaustive-enumeration"
    json.loads(dumps(v))
    # the bundle replays to the same rewritten history
    _, h_rew = replay(cx, orig, rew)
    assert h_rew.serialize() == cx["history"]


def test_replay_rejects_other_programs():
    orig, rew, ins, horizon, omd = unbatched_register()
    cx = check_exact(orig, rew, ins, 2, horizon).counterexample
    with pytest.raises(ReplayError):
        replay(cx, orig, orig)


def test_eventual_counterexample_replays():
    orig, rew, ins, horizon, _ = value_keyed_storage()
    v = check_eventual(orig, rew, ins, 20, 2, horizon)
    assert not v.equivalent
    _, h_rew = replay(v.counterexample, orig, rew)
    assert h_rew.serialize() == v.counterexample["history"]


def test_voting_plan_step_equivalent_on_a_few_seeds():
    e = entry("voting")
    last = apply_plan(e.program, e.plan.steps)[-1].program
    c = e.config
    v = check_eventual(e.program, last, c.inputs, 5, c.max_delay, c.horizon, c.outputs)
    assert v.equivalent, v.counterexample
