"""Program-to-program rewrites: decoupling and partitioning.

Every public rewrite checks its analysis precondition first and raises
PreconditionError with a witness when it does not hold. Generated relations
get fresh names so repeated rewrites never collide.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .analysis import (
    DistributionPolicy,
    PartitionKey,
    Verdict,
    _colocated_atoms,
    _key_equal,
    existence_dependency,
    find_distribution_policy,
    infer_dependencies,
    is_functional,
    is_independent,
    is_monotonic,
    is_mutually_independent,
    is_state_machine,
    rule_closure,
    signature,
    state_machine_inputs,
)
from .ast import (
    Agg,
    Atom,
    BinOp,
    Cmp,
    Component,
    Const,
    Delay,
    Policy,
    Program,
    Relation,
    Rule,
    Var,
    fresh_name,
    normalize,
    rule_vars,
)
from .dialect import ASYNC, SEQ, SYNC, body_space_time, check_well_formed, classify_rule, is_persistence_rule


class RewriteError(Exception):
    pass


class PreconditionError(RewriteError):
    def __init__(self, msg: str, witness: str | None = None, verdict: Verdict | None = None):
        super().__init__(msg)
        self.witness = witness
        self.verdict = verdict


@dataclass(frozen=True)
class SplitPlan:
    """Rules `keep` stay on the source addresses, rules `move` go to `new_addrs`.

    Indices are 0-based positions in the source component. `new_addrs` has one
    address per source address.
    """

    component: str
    keep: tuple[int, ...]
    move: tuple[int, ...]
    new_name: str
    new_addrs: tuple[str, ...]


@dataclass
class RewriteResult:
    program: Program
    generated: list[str] = field(default_factory=list)
    evidence: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"generated": sorted(self.generated), "evidence": self.evidence}


# ---------------------------------------------------------------- rule surgery


def subst_term(x, m: dict[str, str]):
    if isinstance(x, Var):
        return Var(m.get(x.name, x.name))
    if isinstance(x, BinOp):
        return BinOp(x.op, subst_term(x.left, m), subst_term(x.right, m))
    if isinstance(x, Agg):
        return Agg(x.func, tuple(m.get(v, v) for v in x.vars), x.zero)
    return x


def subst_atom(a: Atom, m: dict[str, str]) -> Atom:
    return Atom(a.rel, tuple(subst_term(x, m) for x in a.args), a.negated)


def subst_lit(b, m):
    if isinstance(b, Atom):
        return subst_atom(b, m)
    if isinstance(b, Cmp):
        return Cmp(b.op, subst_term(b.left, m), subst_term(b.right, m))
    return Delay(tuple(subst_term(x, m) for x in b.inputs), Var(m.get(b.out.name, b.out.name)))


def fresh_var(rule: Rule, base: str, extra: Iterable[str] = ()) -> str:
    taken = rule_vars(rule) | set(extra)
    name = base
    k = 2
    stem, primes = base.rstrip("'"), "'" * (len(base) - len(base.rstrip("'")))
    while name in taken:
        name = f"{stem}{k}{primes}"
        k += 1
    return name


def rename_refs(rule: Rule, m: dict[str, str]) -> Rule:
    """Rename body relations (not the head)."""
    body = tuple(Atom(m.get(b.rel, b.rel), b.args, b.negated) if isinstance(b, Atom) else b for b in rule.body)
    return replace(rule, body=body)


def _taken(p: Program) -> set[str]:
    return {r.name for r in p.relations} | {x.name for x in p.policies}


def _declare(p: Program, rels: Iterable[Relation] = (), facts=(), entangled=(), policies=()) -> Program:
    return normalize(
        replace(
            p,
            relations=p.relations + tuple(rels),
            facts=p.facts + tuple(facts),
            entangled=p.entangled + tuple(entangled),
            policies=p.policies + tuple(policies),
        )
    )


def add_route(p: Program, base: str, pairs: Iterable[tuple[str, str]]) -> tuple[Program, str]:
    """Declare a fresh address-mapping function (identity by default) with explicit pairs."""
    name = fresh_name(base, _taken(p), "")
    rel = Relation(name, 2, "function", 1, "route")
    return _declare(p, [rel], [(name, (a, b)) for a, b in pairs]), name


def redirect_rule(rule: Rule, route: str) -> Rule:
    """Send the head to route(original destination) instead."""
    v = rule.head.args[-2].name
    nv = fresh_var(rule, "l''")
    head = Atom(rule.head.rel, rule.head.args[:-2] + (Var(nv), rule.head.args[-1]))
    body = []
    for b in rule.body:
        if isinstance(b, Delay):
            b = Delay(tuple(subst_term(x, {v: nv}) for x in b.inputs), b.out)
        body.append(b)
    body.append(Atom(route, (Var(v), Var(nv))))
    return Rule(head, tuple(body), rule.label)


def localize(rule: Rule, p: Program, origin: str) -> Rule:
    """Replace data uses of the node's own address with its pre-rewrite address.

    Location and time positions keep the physical address; everything the
    rule computes with sees the logical one, so moved rules derive the same
    content they did before the move.
    """
    l, _ = body_space_time(rule, p)
    uses = False
    for a in [rule.head, *rule.atoms()]:
        data = a.args[:-2] if p.is_idb(a.rel) else a.args
        if any(Var(l) == x or (isinstance(x, Agg) and l in x.vars) for x in data):
            uses = True
    for b in rule.body:
        if isinstance(b, Cmp) and l in b.vars():
            uses = True
    if not uses:
        return rule
    lo = fresh_var(rule, "lo")
    m = {l: lo}

    def fix(a: Atom) -> Atom:
        if p.is_idb(a.rel):
            return Atom(a.rel, tuple(subst_term(x, m) for x in a.args[:-2]) + a.args[-2:], a.negated)
        return subst_atom(a, m)

    body = [fix(b) if isinstance(b, Atom) else b if isinstance(b, Delay) else subst_lit(b, m) for b in rule.body]
    body.append(Atom(origin, (Var(l), Var(lo))))
    return Rule(fix(rule.head), tuple(body), rule.label)


def _forward_rule(p: Program, rel: str, new_rel: str, route: str, t1: bool = False) -> Rule:
    """new_rel(x..., [t,] l', t') :- rel(x..., l, t), route(l, l'), delay((x..., l, t, l'), t')."""
    n = p.rel(rel).arity - 2
    xs = [Var(f"x{i}") for i in range(n)]
    l, t, l2, t2 = Var("l"), Var("t"), Var("l'"), Var("t'")
    head_data = xs + ([t] if t1 else [])
    return Rule(
        Atom(new_rel, tuple(head_data) + (l2, t2)),
        (
            Atom(rel, tuple(xs) + (l, t)),
            Atom(route, (l, l2)),
            Delay(tuple(xs) + (l, t, l2), t2),
        ),
    )


def _producers(p: Program, rel: str) -> list[tuple[Component, int, Rule]]:
    return [(c, i, r) for c, i, r in p.all_rules() if r.head.rel == rel]


def _client_inputs(p: Program) -> set[str]:
    """Relations injected from outside: declared client relations and IDB relations nobody derives."""
    derived = p.head_relations
    out = {r.name for r in p.relations if r.kind == "idb" and r.name not in derived}
    return out | {c for c in p.client if c not in derived}


# ---------------------------------------------------------------- redirection


def redirection(p: Program, target: str, new_addrs: Iterable[str], rels: Iterable[str] | None = None) -> RewriteResult:
    """Route async messages for relations referenced by `target` through a forward mapping.

    Only the producers change; moving the target's rules is up to the caller.
    """
    comp = p.component(target)
    new_addrs = tuple(new_addrs)
    if len(new_addrs) != len(comp.addrs):
        raise RewriteError("need one new address per component address")
    p, fwd = add_route(p, "forward", zip(comp.addrs, new_addrs))
    wanted = set(rels) if rels is not None else set(signature(comp, p).referenced)
    comps = []
    changed = []
    for c in p.components:
        rules = []
        for i, r in enumerate(c.rules):
            if r.head.rel in wanted and classify_rule(r, p) == ASYNC:
                r = redirect_rule(r, fwd)
                changed.append(f"{c.name}[{i + 1}]")
            rules.append(r)
        comps.append(replace(c, rules=tuple(rules)))
    return RewriteResult(p.with_components(comps), [fwd], {"redirected": {"rules": changed}})


# ---------------------------------------------------------------- decoupling


def _split(p: Program, plan: SplitPlan) -> tuple[Component, list[Rule], list[Rule]]:
    comp = p.component(plan.component)
    n = len(comp.rules)
    keep, move = set(plan.keep), set(plan.move)
    if keep & move:
        raise RewriteError("rule sets overlap")
    if keep | move != set(range(n)):
        raise RewriteError(f"rule sets must cover all {n} rules of {comp.name}")
    if len(plan.new_addrs) != len(comp.addrs):
        raise RewriteError("need one new address per component address")
    if plan.new_name in {c.name for c in p.components}:
        raise RewriteError(f"component {plan.new_name} already exists")
    return comp, [comp.rules[i] for i in sorted(keep)], [comp.rules[i] for i in sorted(move)]


def _check(verdicts: dict[str, Verdict]) -> dict[str, dict]:
    for name, v in verdicts.items():
        if not v:
            why = "; ".join(v.reasons) or name
            raise PreconditionError(f"precondition {name} violated: {why}", v.witness, v)
    return {k: v.to_dict() for k, v in verdicts.items()}


def _decouple(p: Program, plan: SplitPlan, evidence: dict, persist_inputs: bool) -> RewriteResult:
    comp, c1, c2 = _split(p, plan)
    c2_refs = signature(c2, p).referenced
    c2_heads = {r.head.rel for r in c2}
    c1_heads = {r.head.rel for r in c1}
    clients = _client_inputs(p)
    for rel in sorted(c2_refs - c2_heads):
        if rel in clients and rel not in c1_heads:
            raise PreconditionError(f"{rel} is a client input; moving its consumer would change the client", rel)
    p, fwd = add_route(p, "forward", zip(comp.addrs, plan.new_addrs))
    p, origin = add_route(p, "origin", zip(plan.new_addrs, comp.addrs))
    generated = [fwd, origin]
    taken = _taken(p)
    renames: dict[str, str] = {}
    new_rels = []
    fw_rules = []
    redirect = set()
    for rel in sorted(c2_refs - c2_heads):
        if rel in c1_heads:
            # derived locally on C1: forward with explicit asynchrony
            name = fresh_name(rel, taken, "__fw")
            taken.add(name)
            new_rels.append(Relation(name, p.rel(rel).arity, "idb"))
            renames[rel] = name
            fw_rules.append(_forward_rule(p, rel, name, fwd))
        else:
            redirect.add(rel)
    # C2's own async self-sends also need the new address
    redirect |= {r.head.rel for r in c2 if r.head.rel in c2_refs}
    extra_c2 = []
    if persist_inputs:
        for rel in sorted(c2_refs - c2_heads):
            src = renames.get(rel, rel)
            name = fresh_name(rel, taken, "__alias")
            taken.add(name)
            new_rels.append(Relation(name, p.rel(rel).arity, "idb"))
            n = p.rel(rel).arity - 2
            xs = tuple(Var(f"x{i}") for i in range(n))
            l, t, t2 = Var("l"), Var("t"), Var("t'")
            extra_c2.append(Rule(Atom(name, xs + (l, t)), (Atom(src, xs + (l, t)),)))
            extra_c2.append(
                Rule(Atom(name, xs + (l, t2)), (Atom(name, xs + (l, t)), Cmp("=", t2, BinOp("+", t, Const(1)))))
            )
            renames[rel] = name
    generated += [r.name for r in new_rels]
    p = _declare(p, new_rels)
    comps = []
    for c in p.components:
        if c.name == comp.name:
            comps.append(replace(c, rules=tuple(c1) + tuple(fw_rules)))
            moved = [localize(rename_refs(r, renames), p, origin) for r in c2]
            comps.append(Component(plan.new_name, plan.new_addrs, tuple(extra_c2) + tuple(moved)))
            continue
        comps.append(c)
    # redirect producers (anywhere, including the moved rules) of relations C2 now receives
    out = []
    for c in comps:
        rules = []
        for r in c.rules:
            if r.head.rel in redirect and classify_rule(r, p) == ASYNC:
                r = redirect_rule(r, fwd)
            rules.append(r)
        out.append(replace(c, rules=tuple(rules)))
    q = p.with_components(out)
    _assert_well_formed(q)
    return RewriteResult(q, generated, evidence)


def _assert_well_formed(p: Program) -> None:
    bad = check_well_formed(p)
    if bad:
        raise RewriteError("rewrite produced an ill-formed program: " + "; ".join(map(str, bad)))


def decouple_mutually_independent(p: Program, plan: SplitPlan) -> RewriteResult:
    _, c1, c2 = _split(p, plan)
    ev = _check({"mutually_independent": is_mutually_independent(c1, c2, p)})
    return _decouple(p, plan, ev, persist_inputs=False)


def decouple_monotonic(p: Program, plan: SplitPlan, mode: str = "strict") -> RewriteResult:
    _, c1, c2 = _split(p, plan)
    ev = _check({"c1_independent_of_c2": is_independent(c1, c2, p), "c2_monotonic": is_monotonic(c2, p, mode)})
    return _decouple(p, plan, ev, persist_inputs=True)


def decouple_functional(p: Program, plan: SplitPlan) -> RewriteResult:
    _, c1, c2 = _split(p, plan)
    ev = _check({"c1_independent_of_c2": is_independent(c1, c2, p), "c2_functional": is_functional(c2, p)})
    return _decouple(p, plan, ev, persist_inputs=False)


# ---------------------------------------------------------------- partitioning


def _check_policy(c: Component, p: Program, policy: DistributionPolicy, cd: bool) -> None:
    refs = set(signature(c, p).referenced)
    missing = sorted(refs - set(policy.keys))
    if missing:
        raise PreconditionError(f"policy does not cover {missing[0]}", missing[0])
    deps = infer_dependencies(p) if cd else None
    for i, r in enumerate(c.rules):
        atoms = _colocated_atoms(r, p, refs)
        closure = rule_closure(r, p, dict(deps.fds)) if cd else {}
        for j, a1 in enumerate(atoms):
            for a2 in atoms[j + 1 :]:
                if not _key_equal(a1, policy.keys[a1.rel], a2, policy.keys[a2.rel], closure, cd):
                    raise PreconditionError(
                        f"policy splits {a1.rel} and {a2.rel} in rule {i + 1}", f"{c.name}[{i + 1}]"
                    )


def partition(
    p: Program,
    component: str,
    policy: DistributionPolicy,
    nodes: dict[str, tuple[str, ...]] | None = None,
    mode: str = "cohash",
) -> RewriteResult:
    """Spread a component over several nodes per address, routing inputs by `policy`.

    `nodes` maps each original address to its partition addresses; by default
    `policy.nodes` is split evenly across the original addresses.
    """
    c = p.component(component)
    if nodes is None:
        per = max(1, len(policy.nodes) // len(c.addrs))
        nodes = {a: tuple(policy.nodes[i * per : (i + 1) * per]) for i, a in enumerate(c.addrs)}
    if set(nodes) != set(c.addrs) or any(not v for v in nodes.values()):
        raise RewriteError("every component address needs at least one partition")
    _check_policy(c, p, policy, mode == "cd")
    sig = signature(c, p)
    heads = {r.head.rel for r in c.rules}
    clients = _client_inputs(p)
    for rel in sorted(sig.referenced - heads):
        if rel in clients:
            raise PreconditionError(f"{rel} is a client input; partitioning would change the client", rel)
    flat = tuple(a for orig in c.addrs for a in nodes[orig])
    p, origin = add_route(p, "origin", [(a, orig) for orig in c.addrs for a in nodes[orig]])
    generated = [origin]
    routed = sorted(r for r in sig.referenced if any(classify_rule(x, p) == ASYNC for _, _, x in _producers(p, r)))
    taken = _taken(p)
    pols = []
    pol_of = {}
    for rel in routed:
        key = policy.keys[rel]
        name = fresh_name("D_" + rel, taken, "")
        taken.add(name)
        mapping = tuple((orig, nodes[orig]) for orig in c.addrs)
        pols.append(Policy(name, rel, (key.attr,), key.fn, mapping))
        pol_of[rel] = name
        generated.append(name)
    p = _declare(p, policies=pols)
    # declare the policy function relations the way the parser would
    p = _declare(
        p,
        [Relation(x.name, p.rel(x.rel).arity, "function", p.rel(x.rel).arity - 1, "partition") for x in pols],
    )
    comps = []
    for comp in p.components:
        rules = []
        for r in comp.rules:
            if comp.name == component:
                r = localize(r, p, origin)
            if r.head.rel in pol_of and classify_rule(r, p) == ASYNC:
                r = _route_by_policy(r, pol_of[r.head.rel])
            rules.append(r)
        addrs = flat if comp.name == component else comp.addrs
        comps.append(replace(comp, addrs=addrs, rules=tuple(rules)))
    q = p.with_components(comps)
    _assert_well_formed(q)
    return RewriteResult(q, generated, {"policy": policy.to_dict(), "mode": mode})


def _route_by_policy(r: Rule, pol: str) -> Rule:
    v = r.head.args[-2]
    nv = fresh_var(r, "l''")
    data = r.head.args[:-2]
    head = Atom(r.head.rel, data + (Var(nv), r.head.args[-1]))
    body = [Delay(tuple(subst_term(x, {v.name: nv}) for x in b.inputs), b.out) if isinstance(b, Delay) else b for b in r.body]
    body.append(Atom(pol, tuple(data) + (v, Var(nv))))
    return Rule(head, tuple(body), r.label)


def partition_cohash(p: Program, component: str, nodes: dict[str, tuple[str, ...]]) -> RewriteResult:
    c = p.component(component)
    flat = tuple(a for orig in c.addrs for a in nodes[orig])
    res = find_distribution_policy(c, p, None, flat, "cohash")
    if not res.ok:
        raise PreconditionError(f"no co-hashing policy: {res.reason}", f"{component}[{res.blocking_rule + 1}]")
    out = partition(p, component, res.policy, nodes, "cohash")
    return out


def partition_with_dependencies(p: Program, component: str, nodes: dict[str, tuple[str, ...]]) -> RewriteResult:
    c = p.component(component)
    flat = tuple(a for orig in c.addrs for a in nodes[orig])
    deps = infer_dependencies(p)
    res = find_distribution_policy(c, p, deps, flat, "cd")
    if not res.ok:
        raise PreconditionError(f"no dependency-aware policy: {res.reason}", f"{component}[{res.blocking_rule + 1}]")
    out = partition(p, component, res.policy, nodes, "cd")
    out.evidence["dependencies"] = deps.to_dict()
    return out


# ---------------------------------------------------------------- batching


def _xs(n: int, base: str = "x") -> tuple[Var, ...]:
    return tuple(Var(f"{base}{i}") for i in range(n))


def _succ(new: Var, old: Var) -> Cmp:
    return Cmp("=", new, BinOp("+", old, Const(1)))


def _persist(rel: str, data: tuple, guard: Iterable = ()) -> Rule:
    l, t, t2 = Var("l"), Var("t"), Var("t'")
    return Rule(Atom(rel, tuple(data) + (l, t2)), (Atom(rel, tuple(data) + (l, t)), *guard, _succ(t2, t)))


@dataclass
class _Batching:
    """Names and rules produced when one side batches relations to the other."""

    sender: list[Rule]
    receiver: list[Rule]
    relations: list[Relation]
    entangled: list[tuple[str, int]]
    sealed: dict[str, str]
    names: dict[str, str]


def _batching(p: Program, rels: list[str], fwd: str, taken: set[str]) -> _Batching:
    """Ship `rels` in numbered batches; the receiver releases one whole batch per tick, in order.

    Sender rules run where the relations live, receiver rules where the
    forwarded copies land. Each batch carries its per-relation counts, the
    send time and the time of the previous non-empty batch (-1 for none).
    """

    def fresh(base: str) -> str:
        name = fresh_name(base, taken, "")
        taken.add(name)
        return name

    names = {k: fresh(k) for k in ("batchSize", "nonEmptyBatch", "batchTimes", "hasBatch", "inputs", "canSeal", "sealed")}
    k = len(rels)
    l, t, l2, t2, t1, pt = Var("l"), Var("t"), Var("l'"), Var("t'"), Var("t1"), Var("pt")
    ns = _xs(k, "n")
    sender, receiver, relations, ent = [], [], [], []
    sealed: dict[str, str] = {}
    counts = []
    per = []
    for i, rel in enumerate(rels):
        n = p.rel(rel).arity - 2
        xs = _xs(n)
        fw, cnt, recv, rcnt, ready, rs = (
            fresh(rel + "__batch"),
            fresh(rel + "__count"),
            fresh(rel + "__recv"),
            fresh(rel + "__recvCount"),
            fresh(rel + "__ready"),
            fresh(rel + "__sealed"),
        )
        sealed[rel] = rs
        per.append((rel, xs, fw, cnt, recv, rcnt, ready, rs))
        relations += [
            Relation(fw, n + 3, "idb"),
            Relation(cnt, 3, "idb"),
            Relation(recv, n + 3, "idb"),
            Relation(rcnt, 4, "idb"),
            Relation(ready, 3, "idb"),
            Relation(rs, n + 2, "idb"),
        ]
        ent += [(fw, n), (recv, n), (rcnt, 1), (ready, 0)]
        agg = Agg("count", tuple(x.name for x in xs), zero=True) if xs else Agg("count", (), zero=True)
        sender.append(Rule(Atom(fw, xs + (t, l2, t2)), (Atom(rel, xs + (l, t)), Atom(fwd, (l, l2)), Delay(xs + (t, l, l2), t2))))
        sender.append(Rule(Atom(cnt, (agg, l, t)), (Atom(rel, xs + (l, t)),)))
        counts.append(Atom(cnt, (ns[i], l, t)))
    total = ns[0]
    for x in ns[1:]:
        total = BinOp("+", total, x)
    bs, ne, bt, hb, inp, cs, sd = (names[x] for x in ("batchSize", "nonEmptyBatch", "batchTimes", "hasBatch", "inputs", "canSeal", "sealed"))
    relations += [
        Relation(bs, 3, "idb"),
        Relation(ne, 2, "idb"),
        Relation(bt, 3, "idb"),
        Relation(hb, 2, "idb"),
        Relation(inp, k + 4, "idb"),
        Relation(cs, 3, "idb"),
        Relation(sd, 3, "idb"),
    ]
    ent += [(bt, 0), (inp, k), (inp, k + 1), (cs, 0), (sd, 0)]
    nv = Var("n")
    sender += [
        Rule(Atom(bs, (nv, l, t)), (*counts, Cmp("=", nv, total))),
        Rule(Atom(ne, (l, t)), (Atom(bs, (nv, l, t)), Cmp("!=", nv, Const(0)))),
        Rule(Atom(bt, (t, l, t2)), (Atom(ne, (l, t)), _succ(t2, t))),
        _persist(bt, (pt,), (Atom(ne, (l, t), negated=True),)),
        Rule(Atom(hb, (l, t)), (Atom(bt, (pt, l, t)),)),
        Rule(
            Atom(inp, ns + (t, pt, l2, t2)),
            (Atom(bt, (pt, l, t)), Atom(ne, (l, t)), *counts, Atom(fwd, (l, l2)), Delay(ns + (t, pt, l, l2), t2)),
        ),
        Rule(
            Atom(inp, ns + (t, Const(-1), l2, t2)),
            (Atom(ne, (l, t)), Atom(hb, (l, t), negated=True), *counts, Atom(fwd, (l, l2)), Delay(ns + (t, l, l2), t2)),
        ),
    ]
    inputs_atom = Atom(inp, ns + (t1, pt, l, t))
    readies = []
    for i, (rel, xs, fw, cnt, recv, rcnt, ready, rs) in enumerate(per):
        agg = Agg("count", tuple(x.name for x in xs)) if xs else Agg("count", ())
        receiver += [
            Rule(Atom(recv, xs + (t1, l, t)), (Atom(fw, xs + (t1, l, t)),)),
            _persist(recv, xs + (t1,)),
            Rule(Atom(rcnt, (agg, t1, l, t)), (Atom(recv, xs + (t1, l, t)),)),
            Rule(Atom(ready, (t1, l, t)), (inputs_atom, Atom(rcnt, (ns[i], t1, l, t)))),
            Rule(Atom(ready, (t1, l, t)), (inputs_atom, Cmp("=", ns[i], Const(0)))),
            Rule(Atom(rs, xs + (l, t)), (Atom(recv, xs + (t1, l, t)), Atom(cs, (t1, l, t)))),
        ]
        readies.append(Atom(ready, (t1, l, t)))
    not_done = Atom(sd, (t1, l, t), negated=True)
    receiver += [
        _persist(inp, ns + (t1, pt)),
        Rule(Atom(cs, (t1, l, t)), (*readies, inputs_atom, Atom(sd, (pt, l, t)), not_done)),
        Rule(Atom(cs, (t1, l, t)), (*readies, Atom(inp, ns + (t1, Const(-1), l, t)), not_done)),
        Rule(Atom(sd, (t1, l, t2)), (Atom(cs, (t1, l, t)), _succ(t2, t))),
        _persist(sd, (t1,)),
    ]
    return _Batching(sender, receiver, relations, ent, sealed, names)


def _input_rels(c2: list[Rule], p: Program) -> list[str]:
    sig = signature(c2, p)
    return sorted(sig.referenced - sig.heads)


def decouple_state_machine(p: Program, plan: SplitPlan) -> RewriteResult:
    """Move C2 behind an ordered batch channel so it sees C1's input batches one tick at a time."""
    comp, c1, c2 = _split(p, plan)
    ev = _check({"c1_independent_of_c2": is_independent(c1, c2, p), "c2_state_machine": is_state_machine(c2, p)})
    ins = _input_rels(c2, p)
    c2_refs = signature(c2, p).referenced
    for r in c2:
        if r.head.rel in c2_refs and classify_rule(r, p) == ASYNC:
            raise PreconditionError(f"{r.head.rel} is sent by C2 to itself and would bypass the batch order", r.head.rel)
    if not ins:
        raise PreconditionError("C2 has no inputs to batch")
    p, fwd = add_route(p, "forward", zip(comp.addrs, plan.new_addrs))
    p, origin = add_route(p, "origin", zip(plan.new_addrs, comp.addrs))
    b = _batching(p, ins, fwd, _taken(p))
    p = _declare(p, b.relations, entangled=b.entangled)
    moved = [localize(rename_refs(r, b.sealed), p, origin) for r in c2]
    comps = []
    for c in p.components:
        if c.name == comp.name:
            comps.append(replace(c, rules=tuple(c1) + tuple(b.sender)))
            comps.append(Component(plan.new_name, plan.new_addrs, tuple(b.receiver) + tuple(moved)))
        else:
            comps.append(c)
    q = p.with_components(comps)
    _assert_well_formed(q)
    ev["batched"] = {"relations": ins}
    return RewriteResult(q, [fwd, origin] + [r.name for r in b.relations], ev)


def decouple_asymmetric(p: Program, plan: SplitPlan, mode: str = "strict") -> RewriteResult:
    """C2 takes its inputs directly and ships C1 batches; C2's outputs wait for C1's batch acks.

    `mode` selects the monotonicity check ("relaxed" admits thresholds and
    garbage-collected persistence).
    """
    comp, c1, c2 = _split(p, plan)
    mono = is_monotonic(c2, p, mode)
    func = is_functional(c2, p)
    ev = _check(
        {
            "c2_independent_of_c1": is_independent(c2, c1, p),
            "c2_state_machine": is_state_machine(c2, p),
            "c2_monotonic_or_functional": mono if mono else func if func else Verdict(False, mono.reasons + func.reasons),
        }
    )
    s1, s2 = signature(c1, p), signature(c2, p)
    back = sorted(s1.referenced & s2.heads)
    if not back:
        raise PreconditionError("C1 reads nothing from C2; use a plain decoupling")
    for r in c2:
        if r.head.rel in back and classify_rule(r, p) == ASYNC:
            raise PreconditionError(f"{r.head.rel} reaches C1 asynchronously and cannot be batched", r.head.rel)
    ins = sorted(state_machine_inputs(c2, p))
    clients = _client_inputs(p)
    for rel in ins:
        if rel in s1.referenced:
            raise PreconditionError(f"{rel} is read by both sides", rel)
        if rel in clients:
            raise PreconditionError(f"{rel} is a client input; moving its consumer would change the client", rel)
    pairs = list(zip(comp.addrs, plan.new_addrs))
    p, fwd = add_route(p, "forward", pairs + [(b, a) for a, b in pairs])
    p, origin = add_route(p, "origin", [(b, a) for a, b in pairs])
    taken = _taken(p)
    b = _batching(p, back, fwd, taken)

    def fresh(base: str) -> str:
        name = fresh_name(base, taken, "")
        taken.add(name)
        return name

    ack, allb, wait, has_wait, can = (fresh(x) for x in ("batchACK", "allBatches", "outWait", "outHasWait", "outCanSend"))
    rels = list(b.relations) + [
        Relation(ack, 3, "idb"),
        Relation(allb, 3, "idb"),
        Relation(wait, 4, "idb"),
        Relation(has_wait, 3, "idb"),
        Relation(can, 3, "idb"),
    ]
    ent = list(b.entangled) + [(ack, 0), (allb, 0), (wait, 0), (wait, 1), (has_wait, 0), (can, 0)]
    l, t, l2, t2, t3, tb = Var("l"), Var("t"), Var("l'"), Var("t'"), Var("t2"), Var("tb")
    cs, ne = b.names["canSeal"], b.names["nonEmptyBatch"]
    c1_extra = [Rule(Atom(ack, (t3, l2, t2)), (Atom(cs, (t3, l, t)), Atom(fwd, (l, l2)), Delay((t3, l, t, l2), t2)))]
    c2_extra = [
        _persist(ack, (t3,)),
        Rule(Atom(allb, (t, l, t)), (Atom(ne, (l, t)),)),
        _persist(allb, (tb,)),
        Rule(Atom(has_wait, (t3, l, t)), (Atom(wait, (tb, t3, l, t)),)),
        Rule(Atom(can, (t3, l, t)), (Atom(wait, (tb, t3, l, t)), Atom(ack, (tb, l, t)))),
    ]
    moved = []
    buffered = []
    for r in c2:
        r = localize(r, p, origin)
        if classify_rule(r, p) != ASYNC or r.head.rel in back or r.head.rel in s2.referenced:
            moved.append(r)
            continue
        # buffer this output until C1 acknowledged every batch up to its derivation time
        bl, bt_ = body_space_time(r, p)
        data = r.head.args[:-2]
        dest = r.head.args[-2]
        n = len(data)
        name = fresh(r.head.rel + "__pending")
        rels.append(Relation(name, n + 4, "idb"))
        ent.append((name, 0))
        body = tuple(x for x in r.body if not isinstance(x, Delay))
        moved.append(Rule(Atom(name, (Var(bt_), dest) + data + (Var(bl), Var(bt_))), body, r.label))
        ys = _xs(n, "y")
        pend = Atom(name, (t3, l2) + ys + (l, t))
        c2_extra += [
            _persist(name, (t3, l2) + ys, (Atom(can, (t3, l, t), negated=True),)),
            Rule(Atom(r.head.rel, ys + (l2, t2)), (pend, Atom(can, (t3, l, t)), Delay(ys + (t3, l, t, l2), t2))),
            Rule(Atom(wait, (Agg("max", ("tb",)), t3, l, t)), (Atom(allb, (tb, l, t)), pend, Cmp("<=", tb, t3))),
            Rule(Atom(can, (t3, l, t)), (pend, Atom(has_wait, (t3, l, t), negated=True))),
        ]
        buffered.append(r.head.rel)
    p = _declare(p, rels, entangled=ent)
    c1_rules = [rename_refs(r, b.sealed) for r in c1]
    comps = []
    for c in p.components:
        if c.name == comp.name:
            comps.append(replace(c, rules=tuple(c1_rules) + tuple(b.receiver) + tuple(c1_extra)))
            comps.append(Component(plan.new_name, plan.new_addrs, tuple(moved) + tuple(b.sender) + tuple(c2_extra)))
        else:
            comps.append(c)
    # C2's inputs, including its own sends to itself, now go to the new address
    routed = set(ins) | {r.head.rel for r in c2 if r.head.rel in s2.referenced and classify_rule(r, p) == ASYNC}
    out = []
    for c in comps:
        rules = []
        for r in c.rules:
            if r.head.rel in routed and classify_rule(r, p) == ASYNC:
                r = redirect_rule(r, fwd)
            rules.append(r)
        out.append(replace(c, rules=tuple(rules)))
    q = p.with_components(out)
    _assert_well_formed(q)
    ev["batched"] = {"relations": back, "buffered_outputs": sorted(set(buffered))}
    return RewriteResult(q, [fwd, origin] + [r.name for r in rels], ev)


# ---------------------------------------------------------------- partial partitioning


@dataclass
class _Partial:
    """Bookkeeping names the seal partitioning step builds on."""

    apply_index: str
    origin: str
    nodes: dict[str, tuple[str, ...]]


def _async_producers_inside(comp: Component, rels: set[str], p: Program) -> list[str]:
    return sorted({r.head.rel for r in comp.rules if r.head.rel in rels and classify_rule(r, p) == ASYNC})


def partial_partition(
    p: Program,
    plan: SplitPlan,
    nodes: dict[str, tuple[str, ...]],
) -> RewriteResult:
    """Partition C2's state across nodes while replicating C1's, ordered by a coordinator.

    `plan.keep` are the replicated rules (C1), `plan.move` the partitioned
    ones (C2); `plan.new_name`/`plan.new_addrs` name the coordinator, one per
    original address. Replicated inputs go to the coordinator, which numbers
    each tick's arrivals as one batch, collects a vote from every node and
    then commits the batch to all of them. Nodes apply committed batches in
    index order and hold back partitioned inputs while a vote is open or a
    committed batch is still unapplied.
    """
    res, _ = _partial_partition(p, plan, nodes)
    return res


def _partial_partition(p: Program, plan: SplitPlan, nodes: dict[str, tuple[str, ...]]) -> tuple[RewriteResult, _Partial]:
    comp, c1, c2 = _split(p, plan)
    if set(nodes) != set(comp.addrs) or any(not v for v in nodes.values()):
        raise RewriteError("every component address needs at least one partition")
    s1, s2 = signature(c1, p), signature(c2, p)
    replicated = set(s1.referenced | s1.heads)
    ev = _check(
        {
            "c1_independent_of_c2": is_independent(c1, c2, p),
            "c1_state_machine": is_state_machine(c1, p),
            "c2_state_machine": is_state_machine(c2, p),
        }
    )
    flat = tuple(a for orig in comp.addrs for a in nodes[orig])
    deps = infer_dependencies(p)
    pol = find_distribution_policy(c2, p, deps, flat, "cd", replicated)
    if not pol.ok:
        raise PreconditionError(f"C2 cannot be partitioned: {pol.reason}", f"{comp.name}[{plan.move[pol.blocking_rule] + 1}]")
    ev["policy"] = pol.to_dict()
    rep_ins = sorted(s1.inputs)
    part_ins = sorted(s2.inputs - replicated)
    clients = _client_inputs(p)
    for rel in rep_ins + part_ins:
        if rel in clients:
            raise PreconditionError(f"{rel} is a client input; rerouting it would change the client", rel)
    inside = _async_producers_inside(comp, set(rep_ins + part_ins), p)
    if inside:
        raise PreconditionError(f"{inside[0]} is sent by the component to itself", inside[0])
    if not rep_ins:
        raise PreconditionError("C1 has no inputs to replicate")

    p, origin = add_route(p, "origin", [(a, orig) for orig in comp.addrs for a in nodes[orig]])
    p, proxy = add_route(p, "proxy", zip(comp.addrs, plan.new_addrs))
    coord_of = dict(zip(comp.addrs, plan.new_addrs))
    p, coord = add_route(p, "coordinator", [(a, coord_of[orig]) for orig in comp.addrs for a in nodes[orig]])
    taken = _taken(p)

    def fresh(base: str) -> str:
        name = fresh_name(base, taken, "")
        taken.add(name)
        return name

    rels: list[Relation] = []
    facts = []

    def idb(base: str, arity: int) -> str:
        name = fresh(base)
        rels.append(Relation(name, arity, "idb"))
        return name

    members = fresh("members")
    member_count = fresh("memberCount")
    rels += [Relation(members, 2, "edb"), Relation(member_count, 2, "edb")]
    for orig in comp.addrs:
        facts.append((member_count, (coord_of[orig], len(nodes[orig]))))
        facts += [(members, (coord_of[orig], a)) for a in nodes[orig]]
    member = fresh("member")
    rels.append(Relation(member, 2, "function", 1, "member"))

    elem = idb("batchElem", 3)
    has_new, any_issued, cur, last = idb("hasNew", 2), idb("anyIssued", 2), idb("curI", 3), idb("lastI", 3)
    bundle, vote_req, pend = idb("bundle", 4), idb("voteReq", 4), idb("pendingCommit", 4)
    vote, votes, vcount = idb("vote", 4), idb("votes", 4), idb("voteCount", 4)
    commit_now, commit, committed = idb("commitNow", 4), idb("commit", 4), idb("committed", 3)
    pending_vote, outstanding = idb("pendingVote", 3), idb("outstandingVote", 2)
    store, seen, max_recv = idb("commitStore", 4), idb("commitSeen", 3), idb("maxReceivedI", 3)
    processed, any_proc, max_proc = idb("processedI", 3), idb("anyProcessed", 2), idb("maxProcessedI", 3)
    apply_i, apply_b, frozen = idb("applyI", 3), idb("applyBundle", 3), idb("frozen", 2)

    l, t, l2, t2 = Var("l"), Var("t"), Var("l'"), Var("t'")
    i, j, b, e, n, k = Var("i"), Var("j"), Var("b"), Var("e"), Var("n"), Var("k")
    sealed: dict[str, str] = {}
    proxy_rules: list[Rule] = []
    node_rules: list[Rule] = []
    for rel in rep_ins:
        m = p.rel(rel).arity - 2
        xs = _xs(m)
        pk = fresh(rel + "__pack")
        up = fresh(rel + "__unpack")
        rs = idb(rel + "__sealed", m + 2)
        rels += [Relation(pk, m + 2, "function", m + 1, "pack"), Relation(up, m + 2, "function", 1, "unpack")]
        sealed[rel] = rs
        proxy_rules.append(Rule(Atom(elem, (e, l, t)), (Atom(rel, xs + (l, t)), Atom(pk, (Const(rel),) + xs + (e,)))))
        node_rules.append(
            Rule(Atom(rs, xs + (l, t)), (Atom(apply_b, (b, l, t)), Atom(member, (b, e)), Atom(up, (e, Const(rel)) + xs)))
        )
    proxy_rules += [
        Rule(Atom(has_new, (l, t)), (Atom(elem, (e, l, t)),)),
        Rule(Atom(any_issued, (l, t)), (Atom(last, (j, l, t)),)),
        Rule(Atom(cur, (i, l, t)), (Atom(has_new, (l, t)), Atom(last, (j, l, t)), _succ(i, j))),
        Rule(Atom(cur, (Const(0), l, t)), (Atom(has_new, (l, t)), Atom(any_issued, (l, t), negated=True))),
        Rule(Atom(last, (i, l, t2)), (Atom(cur, (i, l, t)), _succ(t2, t))),
        _persist(last, (j,), (Atom(has_new, (l, t), negated=True),)),
        Rule(Atom(bundle, (Agg("cert", ("e",)), i, l, t)), (Atom(elem, (e, l, t)), Atom(cur, (i, l, t)))),
        Rule(Atom(vote_req, (i, b, l2, t2)), (Atom(bundle, (b, i, l, t)), Atom(members, (l, l2)), Delay((i, b, l, t, l2), t2))),
        Rule(Atom(pend, (i, b, l, t)), (Atom(bundle, (b, i, l, t)),)),
        _persist(pend, (i, b), (Atom(committed, (i, l, t), negated=True),)),
        Rule(Atom(votes, (n, i, l, t)), (Atom(vote, (n, i, l, t)),)),
        _persist(votes, (n, i)),
        Rule(Atom(vcount, (Agg("count", ("n",)), i, l, t)), (Atom(votes, (n, i, l, t)),)),
        Rule(
            Atom(commit_now, (i, b, l, t)),
            (
                Atom(pend, (i, b, l, t)),
                Atom(vcount, (k, i, l, t)),
                Atom(member_count, (l, k)),
                Atom(committed, (i, l, t), negated=True),
            ),
        ),
        Rule(Atom(commit, (i, b, l2, t2)), (Atom(commit_now, (i, b, l, t)), Atom(members, (l, l2)), Delay((i, b, l, t, l2), t2))),
        Rule(Atom(committed, (i, l, t2)), (Atom(commit_now, (i, b, l, t)), _succ(t2, t))),
        _persist(committed, (i,)),
    ]
    node_rules += [
        Rule(Atom(vote, (l, i, l2, t2)), (Atom(vote_req, (i, b, l, t)), Atom(coord, (l, l2)), Delay((l, i, l, t, l2), t2))),
        Rule(Atom(pending_vote, (i, l, t)), (Atom(vote_req, (i, b, l, t)),)),
        _persist(pending_vote, (i,), (Atom(seen, (i, l, t), negated=True),)),
        Rule(Atom(outstanding, (l, t)), (Atom(pending_vote, (i, l, t)), Atom(seen, (i, l, t), negated=True))),
        Rule(Atom(store, (i, b, l, t)), (Atom(commit, (i, b, l, t)),)),
        _persist(store, (i, b)),
        Rule(Atom(seen, (i, l, t)), (Atom(store, (i, b, l, t)),)),
        Rule(Atom(max_recv, (Agg("max", ("i",)), l, t)), (Atom(seen, (i, l, t)),)),
        Rule(Atom(processed, (i, l, t2)), (Atom(apply_i, (i, l, t)), _succ(t2, t))),
        _persist(processed, (i,)),
        Rule(Atom(any_proc, (l, t)), (Atom(processed, (i, l, t)),)),
        Rule(Atom(max_proc, (Agg("max", ("i",)), l, t)), (Atom(processed, (i, l, t)),)),
        Rule(Atom(apply_i, (n, l, t)), (Atom(max_proc, (i, l, t)), Atom(store, (n, b, l, t)), _succ(n, i))),
        Rule(Atom(apply_i, (Const(0), l, t)), (Atom(any_proc, (l, t), negated=True), Atom(store, (Const(0), b, l, t)))),
        Rule(Atom(apply_b, (b, l, t)), (Atom(apply_i, (i, l, t)), Atom(store, (i, b, l, t)))),
        Rule(Atom(frozen, (l, t)), (Atom(outstanding, (l, t)),)),
        Rule(Atom(frozen, (l, t)), (Atom(max_recv, (i, l, t)), Atom(max_proc, (i, l, t), negated=True))),
    ]
    for rel in part_ins:
        m = p.rel(rel).arity - 2
        xs = _xs(m)
        rs = idb(rel + "__sealed", m + 2)
        sealed[rel] = rs
        node_rules += [
            _persist(rel, xs, (Atom(frozen, (l, t)),)),
            Rule(Atom(rs, xs + (l, t)), (Atom(rel, xs + (l, t)), Atom(frozen, (l, t), negated=True))),
        ]
    # partitioned inputs are routed by policy
    pols, pol_of = [], {}
    for rel in part_ins:
        key = pol.policy.keys[rel]
        name = fresh("D_" + rel)
        pols.append(Policy(name, rel, (key.attr,), key.fn, tuple((o, nodes[o]) for o in comp.addrs)))
        pol_of[rel] = name
        rels.append(Relation(name, p.rel(rel).arity, "function", p.rel(rel).arity - 1, "partition"))
    p = _declare(p, rels, facts, policies=pols)
    own = [localize(rename_refs(r, sealed), p, origin) for r in list(c1) + list(c2)]
    comps = []
    for c in p.components:
        if c.name == comp.name:
            comps.append(Component(c.name, flat, tuple(own) + tuple(node_rules)))
            comps.append(Component(plan.new_name, plan.new_addrs, tuple(proxy_rules)))
            continue
        rules = []
        for r in c.rules:
            if classify_rule(r, p) == ASYNC:
                if r.head.rel in rep_ins:
                    r = redirect_rule(r, proxy)
                elif r.head.rel in pol_of:
                    r = _route_by_policy(r, pol_of[r.head.rel])
            rules.append(r)
        comps.append(replace(c, rules=tuple(rules)))
    q = p.with_components(comps)
    seal_free = not any(isinstance(a, Agg) and a.func == "seal" for _, _, r in q.all_rules() for a in r.head.args)
    if seal_free:
        _assert_well_formed(q)
    ev["replicated_inputs"] = rep_ins
    ev["partitioned_inputs"] = part_ins
    generated = [origin, proxy, coord] + [r.name for r in rels]
    return RewriteResult(q, generated, ev), _Partial(apply_i, origin, dict(nodes))


# ---------------------------------------------------------------- sealing


@dataclass(frozen=True)
class _SealSite:
    comp: str
    index: int
    rule: Rule
    out: str
    sealed_vars: tuple[Var, ...]
    group: tuple  # remaining head data terms
    rest: tuple  # body literals minus the delay


def _seal_sites(p: Program) -> list[_SealSite]:
    sites = []
    for c, i, r in p.all_rules():
        aggs = [a for a in r.head.args if isinstance(a, Agg) and a.func == "seal"]
        if not aggs:
            continue
        agg = r.head.args[0]
        if len(aggs) != 1 or not isinstance(agg, Agg) or agg.func != "seal":
            raise RewriteError(f"{c.name}[{i + 1}]: seal must be the first head attribute")
        if not any(isinstance(b, Delay) for b in r.body):
            raise RewriteError(f"{c.name}[{i + 1}]: seal applies to asynchronous rules only")
        group = r.head.args[1:-2]
        if any(isinstance(x, Agg) or not isinstance(x, Var) for x in group):
            raise RewriteError(f"{c.name}[{i + 1}]: seal groups by plain variables only")
        rest = tuple(b for b in r.body if not isinstance(b, Delay))
        sites.append(_SealSite(c.name, i, r, r.head.rel, tuple(Var(v) for v in agg.vars), group, rest))
    outs = [s.out for s in sites]
    if len(set(outs)) != len(outs):
        raise RewriteError("each sealed relation needs exactly one sending rule")
    return sites


def _receivers(p: Program, rel: str) -> list[str]:
    return sorted({c.name for c, _, r in p.all_rules() if any(a.rel == rel for a in r.atoms())})


def desugar_seal(p: Program) -> Program:
    """Expand seal<...> heads into per-fact sends plus a count the receiver waits for."""
    return _desugar_seal(p)[0]


def _desugar_seal(p: Program) -> tuple[Program, list[str]]:
    sites = _seal_sites(p)
    if not sites:
        return p, []
    taken = _taken(p)
    rels: list[Relation] = []

    def idb(base: str, arity: int) -> str:
        name = fresh_name(base, taken, "")
        taken.add(name)
        rels.append(Relation(name, arity, "idb"))
        return name

    l, t, l2, t2, c = Var("l"), Var("t"), Var("l'"), Var("t'"), Var("c")
    sender: dict[str, dict[int, list[Rule]]] = {}
    receiver: dict[str, list[Rule]] = {}
    renames: dict[str, dict[str, str]] = {}
    for s in sites:
        r = s.rule
        dest = r.head.args[-2]
        g = tuple(s.group)
        k = len(g)
        rcount = idb(s.out + "RCount", k + 4)
        out_count = idb(s.out + "Count", k + 3)
        received = idb(s.out + "Received", k + 3)
        sealed = idb(s.out + "Sealed", k + 2)
        out_sealed = idb(s.out + "Delivered", p.rel(s.out).arity)
        bl, bt = body_space_time(r, p)
        src_l, src_t = Var(bl), Var(bt)
        xs = s.sealed_vars
        delay = next(b for b in r.body if isinstance(b, Delay))
        sender.setdefault(s.comp, {})[s.index] = [
            Rule(Atom(rcount, (Agg("count", tuple(x.name for x in xs)),) + g + (dest, src_l, src_t)), s.rest),
            Rule(
                Atom(out_count, (c,) + g + (l2, t2)),
                (Atom(rcount, (c,) + g + (l2, src_l, src_t)), Delay((c,) + g + (src_l, src_t, l2), t2)),
            ),
            Rule(Atom(s.out, xs + g + (dest, r.head.args[-1])), s.rest + (delay,), r.label),
        ]
        ys = _xs(len(xs), "y")
        gs = _xs(k, "g")
        recv = [
            Rule(Atom(received, (Agg("count", tuple(y.name for y in ys)),) + gs + (l, t)), (Atom(s.out, ys + gs + (l, t)),)),
            Rule(Atom(sealed, gs + (l, t)), (Atom(received, (c,) + gs + (l, t)), Atom(out_count, (c,) + gs + (l, t)))),
            Rule(Atom(out_sealed, ys + gs + (l, t)), (Atom(s.out, ys + gs + (l, t)), Atom(sealed, gs + (l, t)))),
            _persist(s.out, ys + gs, (Atom(sealed, gs + (l, t), negated=True),)),
            _persist(out_count, (c,) + gs, (Atom(sealed, gs + (l, t), negated=True),)),
        ]
        for name in _receivers(p, s.out):
            receiver.setdefault(name, []).extend(recv)
            renames.setdefault(name, {})[s.out] = out_sealed
    p = _declare(p, rels)
    comps = []
    for comp in p.components:
        rules = []
        for i, r in enumerate(comp.rules):
            if i in sender.get(comp.name, {}):
                rules += sender[comp.name][i]
            else:
                rules.append(rename_refs(r, renames.get(comp.name, {})))
        rules += receiver.get(comp.name, [])
        comps.append(replace(comp, rules=tuple(rules)))
    q = p.with_components(comps)
    _assert_well_formed(q)
    return q, [x.name for x in rels]


def partition_sealed(p: Program, plan: SplitPlan, nodes: dict[str, tuple[str, ...]]) -> RewriteResult:
    """Partially partition a component whose sealed output each partition sends a share of.

    Every partition counts its own share per committed batch, including an
    explicit zero, and the receiver seals a batch once the counts of all
    partitions have arrived and add up to what it received.
    """
    sites = [s for s in _seal_sites(p) if s.comp == plan.component]
    if not sites:
        raise PreconditionError(f"{plan.component} sends no sealed relation")
    comp, c1, c2 = _split(p, plan)
    rep_ins = set(signature(c1, p).inputs)
    for s in sites:
        if not any(existence_dependency(s.out, [x], comp, p) for x in rep_ins):
            raise PreconditionError(f"{s.out} has no existence dependency on a replicated input", s.out)
    res, info = _partial_partition(p, plan, nodes)
    q = res.program
    sites = {s.index: s for s in _seal_sites(q) if s.comp == plan.component}
    taken = _taken(q)
    rels: list[Relation] = []
    facts = []

    def idb(base: str, arity: int) -> str:
        name = fresh_name(base, taken, "")
        taken.add(name)
        rels.append(Relation(name, arity, "idb"))
        return name

    l, t, l2, t2, c, i, n, pp = Var("l"), Var("t"), Var("l'"), Var("t'"), Var("c"), Var("i"), Var("n"), Var("pp")
    num_parts = fresh_name("numPartitions", taken, "")
    taken.add(num_parts)
    rels.append(Relation(num_parts, 1, "edb"))
    sizes = {len(v) for v in nodes.values()}
    if len(sizes) != 1:
        raise RewriteError("sealed partitioning needs the same partition count per address")
    facts.append((num_parts, (sizes.pop(),)))
    sender: dict[int, list[Rule]] = {}
    receiver: dict[str, list[Rule]] = {}
    renames: dict[str, dict[str, str]] = {}
    for idx, s in sites.items():
        r = s.rule
        dest = r.head.args[-2]
        g = tuple(s.group)
        k = len(g)
        xs = s.sealed_vars
        bl, bt = body_space_time(r, q)
        src_l, src_t = Var(bl), Var(bt)
        iv = Var(fresh_var(r, "i"))
        applied = Atom(info.apply_index, (iv, src_l, src_t))
        seal_atoms = [a for a in s.rest if isinstance(a, Atom) and not a.negated and {x.name for x in xs} <= a.vars()]
        if not seal_atoms:
            raise RewriteError(f"{s.out}: no body literal binds the sealed variables")
        rest_wo = tuple(b for b in s.rest if b is not seal_atoms[0])
        delay = next(b for b in r.body if isinstance(b, Delay))
        out_i = idb(s.out + "Part", q.rel(s.out).arity + 1)
        rcount = idb(s.out + "RCount", k + 5)
        rany = idb(s.out + "Any", k + 4)
        out_count = idb(s.out + "Count", k + 5)
        received = idb(s.out + "Received", k + 4)
        csum = idb(s.out + "CountSum", k + 4)
        cparts = idb(s.out + "CountPartitions", k + 4)
        sealed = idb(s.out + "Sealed", k + 3)
        delivered = idb(s.out + "Delivered", q.rel(s.out).arity)
        head_key = g + (dest, iv)
        sender[idx] = [
            Rule(Atom(rcount, (Agg("count", tuple(x.name for x in xs)),) + head_key + (src_l, src_t)), s.rest + (applied,)),
            Rule(Atom(rany, head_key + (src_l, src_t)), s.rest + (applied,)),
            Rule(Atom(rcount, (Const(0),) + head_key + (src_l, src_t)), rest_wo + (applied, Atom(rany, head_key + (src_l, src_t), negated=True))),
            Rule(
                Atom(out_count, (src_l, iv, c) + g + (l2, t2)),
                (Atom(rcount, (c,) + g + (l2, iv, src_l, src_t)), Delay((src_l, iv, c) + g + (src_l, src_t, l2), t2)),
            ),
            Rule(
                Atom(out_i, (iv,) + xs + g + (dest, r.head.args[-1])),
                s.rest + (applied, Delay((iv,) + tuple(delay.inputs), delay.out)),
                r.label,
            ),
        ]
        ys = _xs(len(xs), "y")
        gs = _xs(k, "g")
        recv = [
            Rule(Atom(received, (i, Agg("count", tuple(y.name for y in ys))) + gs + (l, t)), (Atom(out_i, (i,) + ys + gs + (l, t)),)),
            Rule(Atom(csum, (i, Agg("sum", ("c",))) + gs + (l, t)), (Atom(out_count, (pp, i, c) + gs + (l, t)),)),
            Rule(Atom(cparts, (Agg("count", ("pp",)), i) + gs + (l, t)), (Atom(out_count, (pp, i, c) + gs + (l, t)),)),
            Rule(
                Atom(sealed, (i,) + gs + (l, t)),
                (
                    Atom(received, (i, c) + gs + (l, t)),
                    Atom(csum, (i, c) + gs + (l, t)),
                    Atom(cparts, (n, i) + gs + (l, t)),
                    Atom(num_parts, (n,)),
                ),
            ),
            Rule(
                Atom(sealed, (i,) + gs + (l, t)),
                (Atom(csum, (i, Const(0)) + gs + (l, t)), Atom(cparts, (n, i) + gs + (l, t)), Atom(num_parts, (n,))),
            ),
            Rule(Atom(delivered, ys + gs + (l, t)), (Atom(out_i, (i,) + ys + gs + (l, t)), Atom(sealed, (i,) + gs + (l, t)))),
            _persist(out_i, (i,) + ys + gs, (Atom(sealed, (i,) + gs + (l, t), negated=True),)),
            _persist(out_count, (pp, i, c) + gs, (Atom(sealed, (i,) + gs + (l, t), negated=True),)),
        ]
        for name in _receivers(q, s.out):
            receiver.setdefault(name, []).extend(recv)
            renames.setdefault(name, {})[s.out] = delivered
    q = _declare(q, rels, facts)
    comps = []
    for cm in q.components:
        rules = []
        for j, r in enumerate(cm.rules):
            if cm.name == plan.component and j in sender:
                rules += sender[j]
            else:
                rules.append(rename_refs(r, renames.get(cm.name, {})))
        rules += receiver.get(cm.name, [])
        comps.append(replace(cm, rules=tuple(rules)))
    out = q.with_components(comps)
    _assert_well_formed(out)
    res.program = out
    res.generated += [x.name for x in rels]
    res.evidence["sealed"] = sorted(s.out for s in sites.values())
    return res
