import pytest
from hypothesis import given
from hypothesis import strategies as st

from dedalus_opt.analysis import (
    DistributionPolicy,
    PartitionKey,
    find_distribution_policy,
    infer_dependencies,
    is_functional,
    is_independent,
    is_monotonic,
    is_mutually_independent,
    is_state_machine,
    signature,
)
from dedalus_opt.builtins import FunctionTable, apply_key_fn, stable_hash64
from dedalus_opt.corpus import ROOT, load_program
from dedalus_opt.dialect import ASYNC, classify_rule
from dedalus_opt.evaluator import InputFact, SeededSchedule, run
from dedalus_opt.parser import parse_program


def leader_rules(p, *nums):
    rules = p.component("leader").rules
    return [rules[i - 1] for i in nums]


# ---------------------------------------------------------------- listing claims


def test_storage_signature(listing2):
    sig = signature(listing2.component("storage"), listing2)
    assert sig.referenced == {"toStorage", "hashset", "collisions", "numCollisions"}
    assert sig.inputs == {"toStorage"}
    assert sig.outputs == {"fromStorage"}


def test_leader_split_is_mutually_independent(listing1):
    v = is_mutually_independent(leader_rules(listing1, 1, 2), leader_rules(listing1, 3, 4, 5, 6, 7, 8), listing1)
    assert v.ok


def test_line8_is_monotonic(listing1):
    assert is_monotonic(leader_rules(listing1, 8), listing1).ok


def test_aggregating_lines_are_not_monotonic(listing1):
    v = is_monotonic(leader_rules(listing1, 5, 6, 7), listing1)
    assert not v.ok
    assert any("aggregation" in r for r in v.reasons)


@pytest.mark.parametrize("line", [1, 2])
def test_lines_1_and_2_are_functional(listing1, line):
    assert is_functional(leader_rules(listing1, line), listing1).ok


def test_join_is_not_functional(listing1):
    assert not is_functional(leader_rules(listing1, 8), listing1).ok


def test_storage_cohash_blocked_at_line3(listing2):
    res = find_distribution_policy(listing2.component("storage"), listing2, None, ("a", "b"), "cohash")
    assert not res.ok
    assert res.blocking_rule == 2
    assert "toStorage" in res.reason and "hashset" in res.reason


def test_storage_dependency_policy_keys_on_hash(listing2):
    deps = infer_dependencies(listing2)
    res = find_distribution_policy(listing2.component("storage"), listing2, deps, ("a", "b"), "cd")
    assert res.ok
    keys = {k: str(v) for k, v in res.policy.keys.items()}
    assert keys == {"toStorage": "hash(0)", "hashset": "0", "collisions": "1", "numCollisions": "1"}


def test_inferred_dependencies(listing2):
    d = infer_dependencies(listing2).to_dict()
    assert "hashset: 1 -> 0 (hash)" in d["fds"]
    assert "collisions: 0 -> 1 (hash)" in d["fds"]
    assert "hashset.0 <- hash(toStorage.0)" in d["cds"]


def test_storage_is_a_state_machine(listing2):
    assert is_state_machine(listing2.component("storage"), listing2).ok


def test_independence_is_directional(listing1):
    c1, c2 = leader_rules(listing1, 3, 4, 5, 6, 7), leader_rules(listing1, 8)
    assert is_independent(c1, c2, listing1).ok
    assert not is_mutually_independent(c1, c2, listing1).ok


# ---------------------------------------------------------------- oracles

values = st.sets(st.sampled_from(["apple", "pear", "plum", "fig", "kiwi", "lime", "date"]), min_size=1, max_size=5)


def colliding_storage():
    """listing2.dl with apple, pear and plum hashing to the same bucket."""
    text = (ROOT / "listing2.dl").read_text()
    return parse_program(text + '\nhash("apple",42).\nhash("pear",42).\nhash("plum",42).\n')


def storage_run(p, vals, seed):
    sign = FunctionTable(p).call
    ins = [InputFact("toStorage", (v, sign("sign", (v,))[0][0]), "s1", i % 3) for i, v in enumerate(sorted(vals))]
    return run(p, ins, SeededSchedule(seed, 2), 30, provenance=True)


@given(values, st.integers(0, 50))
def test_inferred_fds_hold_on_runs(vals, seed):
    p = colliding_storage()
    ft = FunctionTable(p)
    res = storage_run(p, vals, seed)
    for rel, fds in infer_dependencies(p).fds.items():
        if not p.is_idb(rel):
            continue
        for f in fds:
            for fact in res.instance.relation(rel):
                dom = tuple(fact.values[i] for i in f.dom)
                assert apply_key_fn(f.fn, dom, ft.key_value)[0] == fact.values[f.rng], (str(f), fact)


def partition_of(policy, fact, ft):
    k = policy.keys[fact.rel]
    return stable_hash64(apply_key_fn(k.fn, (fact.values[k.attr],), ft.key_value)) % len(policy.nodes)


def split_derivations(p, policy, res):
    """Local derivations whose referenced facts would land on different partitions."""
    ft = FunctionTable(p)
    comp = p.component("storage")
    refs = set(policy.keys)
    bad = []
    for head, derivs in res.instance.provenance.items():
        for (cname, i), body in derivs:
            if cname != "storage":
                continue
            facts = [f for f in body if f.rel in refs]
            if classify_rule(comp.rules[i], p) != ASYNC and head.rel in refs:
                facts.append(head)
            if len({partition_of(policy, f, ft) for f in facts}) > 1:
                bad.append((head, facts))
    return bad


@given(values, st.integers(0, 50))
def test_dependency_policy_keeps_every_derivation_on_one_partition(vals, seed):
    p = colliding_storage()
    res = find_distribution_policy(p.component("storage"), p, infer_dependencies(p), ("a", "b", "c"), "cd")
    assert split_derivations(p, res.policy, storage_run(p, vals, seed)) == []


def test_value_keyed_policy_splits_some_derivation():
    p = colliding_storage()
    naive = DistributionPolicy(
        {"toStorage": PartitionKey(0), "hashset": PartitionKey(1), "collisions": PartitionKey(0), "numCollisions": PartitionKey(1)},
        ("a", "b", "c"),
    )
    vals = {"apple", "pear", "plum", "fig", "kiwi", "lime", "date"}
    assert any(split_derivations(p, naive, storage_run(p, vals, s)) for s in range(5))
