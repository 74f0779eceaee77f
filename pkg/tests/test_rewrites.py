import pytest

from dedalus_opt.analysis import signature
from dedalus_opt.corpus import PROTOCOLS, entry, exact_fixtures, load_program, mutants
from dedalus_opt.dialect import check_well_formed, pretty_print
from dedalus_opt.parser import parse_program
from dedalus_opt.plan import PlanError, PlanStep, apply_plan, apply_step, step_from_dict
from dedalus_opt.rewrites import (
    PreconditionError,
    RewriteError,
    SplitPlan,
    decouple_functional,
    decouple_mutually_independent,
    desugar_seal,
    partition_with_dependencies,
    redirection,
)

FIXTURES = {f.kind: f for f in exact_fixtures()}
MUTANTS = {m.kind: m for m in mutants()}


@pytest.mark.parametrize("kind", sorted(MUTANTS))
def test_gate_refuses_mutant(kind):
    with pytest.raises(PreconditionError):
        MUTANTS[kind].apply()


def test_every_kind_has_a_fixture_and_a_mutant():
    assert set(FIXTURES) == set(MUTANTS)
    assert len(FIXTURES) == 9


@pytest.mark.parametrize("kind", sorted(FIXTURES))
def test_rewrite_output_is_well_formed_and_deterministic(kind):
    fx = FIXTURES[kind]
    orig, rew = fx.build()
    assert check_well_formed(rew) == []
    assert parse_program(pretty_print(rew)) == rew
    assert fx.build()[1] == rew
    assert orig != rew


@pytest.mark.parametrize("name", PROTOCOLS)
def test_plans_apply_as_expected(name):
    e = entry(name)
    outs = apply_plan(e.program, e.plan.steps)
    assert [o.as_expected for o in outs] == [True] * len(outs)
    assert check_well_formed(outs[-1].program) == []
    for o in outs:
        assert parse_program(pretty_print(o.program)) == o.program


@pytest.mark.parametrize("name", PROTOCOLS)
def test_plans_keep_client_relations(name):
    e = entry(name)
    final = apply_plan(e.program, e.plan.steps)[-1].program
    assert set(final.client) == set(e.program.client)
    for rel in e.program.client:
        assert final.rel(rel) == e.program.rel(rel)


def test_moving_a_client_input_consumer_is_refused(kvs):
    plan = SplitPlan("leader", tuple(range(2, 8)), (0, 1), "signer", ("sg1",))
    with pytest.raises(PreconditionError, match="client"):
        decouple_functional(kvs, plan)


def test_external_inputs_of_a_lone_listing_are_protected(listing1, listing2):
    with pytest.raises(PreconditionError, match="client"):
        decouple_mutually_independent(listing1, SplitPlan("leader", (0, 1), tuple(range(2, 8)), "collector", ("leader2",)))
    with pytest.raises(PreconditionError, match="client"):
        partition_with_dependencies(listing2, "storage", {a: (a + "a", a + "b") for a in ("s1", "s2", "s3")})


def test_mutually_independent_split_forwards_nothing(kvs):
    res = decouple_mutually_independent(kvs, SplitPlan("leader", (0, 1), tuple(range(2, 8)), "collector", ("leader2",)))
    p = res.program
    assert [c.name for c in p.components] == ["leader", "collector", "storage"]
    assert p.component("collector").addrs == ("leader2",)
    assert signature(p.component("leader"), p).referenced == {"in", "signed"}
    assert not any("__fw" in r.name for r in p.relations)


def test_dependency_partition_of_storage(kvs):
    res = partition_with_dependencies(kvs, "storage", {a: (a + "a", a + "b") for a in ("s1", "s2", "s3")})
    p = res.program
    assert p.component("storage").addrs == ("s1a", "s1b", "s2a", "s2b", "s3a", "s3b")
    assert [x.rel for x in p.policies] == ["toStorage"]
    assert p.policies[0].fn == ("hash",)


def test_redirection_only_touches_producers(listing1):
    res = redirection(listing1, "leader", ["leader9"], rels=["toStorage"])
    assert res.evidence["redirected"]["rules"] == ["leader[2]"]
    assert res.program.component("leader").addrs == ("leader1",)


def test_desugar_seal_is_identity_without_seals(kvs):
    assert desugar_seal(kvs) == kvs


def test_desugar_seal_removes_seal_terms():
    p = load_program("toys/snapshot.dl")
    q = desugar_seal(p)
    assert "seal<" in pretty_print(p)
    assert "seal<" not in pretty_print(q)
    assert check_well_formed(q) == []
    assert desugar_seal(q) == q


@pytest.mark.parametrize(
    "d",
    [
        {"kind": "nope"},
        {"kind": "decouple-functional", "component": "leader"},
        {"kind": "partition-cohash", "component": "storage"},
        {"kind": "partition-cohash", "component": "storage", "partitions": 2, "expect": "maybe"},
    ],
)
def test_bad_plan_steps(d):
    with pytest.raises(PlanError):
        step_from_dict(d)


def test_plan_rule_out_of_range(kvs):
    with pytest.raises(PlanError):
        apply_step(kvs, PlanStep("decouple-functional", "leader", (99,), "x", ("x1",)))


def test_plan_unknown_component(kvs):
    with pytest.raises(PlanError):
        apply_step(kvs, PlanStep("partition-cohash", "nobody", partitions=2))


def test_split_must_cover_component(listing1):
    with pytest.raises(RewriteError):
        decouple_functional(listing1, SplitPlan("leader", (0,), (1,), "x", ("x1",)))
