"""Static checks that gate the rewrites.

Everything here is conservative: a True verdict must be sound, a False
verdict may be overly cautious.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .ast import Agg, Atom, Cmp, Component, Const, Delay, Program, Rule, Var
from .builtins import computable_tags
from .dialect import ASYNC, SEQ, SYNC, classify_rule, is_persistence_rule, is_successor, persisted_relations

MAX_FN_LEN = 3


@dataclass
class Verdict:
    ok: bool
    reasons: list[str] = field(default_factory=list)
    witness: str | None = None

    def __bool__(self) -> bool:
        return self.ok

    def to_dict(self) -> dict:
        d = {"ok": self.ok, "reasons": list(self.reasons)}
        if self.witness is not None:
            d["witness"] = self.witness
        return d


def _rules(c) -> list[Rule]:
    if isinstance(c, Component):
        return list(c.rules)
    return list(c)


# ---------------------------------------------------------------- signatures


@dataclass(frozen=True)
class ComponentSignature:
    referenced: frozenset[str]
    inputs: frozenset[str]
    outputs: frozenset[str]
    heads: frozenset[str]

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("referenced", "inputs", "outputs", "heads")}


def signature(c, p: Program) -> ComponentSignature:
    rules = _rules(c)
    refs = {a.rel for r in rules for a in r.atoms() if p.is_idb(a.rel)}
    heads = {r.head.rel for r in rules}
    return ComponentSignature(frozenset(refs), frozenset(refs - heads), frozenset(heads - refs), frozenset(heads))


def is_independent(c1, c2, p: Program, forwarded: bool = True) -> Verdict:
    """c1 is independent of c2: c1 reads nothing that c2 reads or writes.

    With `forwarded`, a relation both sides read is tolerated when only c1
    derives it: decoupling hands c2 a forwarded copy, so c1 never observes
    c2's use of it.
    """
    s1, s2 = signature(c1, p), signature(c2, p)
    shared = sorted(s1.referenced & s2.referenced)
    if forwarded:
        shared = [r for r in shared if not (r in s1.heads and r not in s2.heads)]
    if shared:
        return Verdict(False, [f"both reference {shared[0]}"], shared[0])
    fed = sorted(s1.referenced & s2.heads)
    if fed:
        return Verdict(False, [f"{fed[0]} is produced by the other side and referenced here"], fed[0])
    return Verdict(True)


def is_mutually_independent(c1, c2, p: Program) -> Verdict:
    v = is_independent(c1, c2, p)
    if not v:
        return v
    return is_independent(c2, c1, p)


# ---------------------------------------------------------------- monotonicity


def _gc_relations(p: Program) -> set[str]:
    return {g.rel for g in p.gcs}


def logically_persisted(p: Program) -> set[str]:
    """Relations whose content never shrinks over time.

    Seeds are relations with a persistence rule; a relation joins if every
    rule deriving it is synchronous or sequential, negation-free and
    aggregation-free, and reads only logically persisted IDB relations.
    """
    out = set(persisted_relations(p))
    defs: dict[str, list[Rule]] = {}
    for _, _, r in p.all_rules():
        defs.setdefault(r.head.rel, []).append(r)
    changed = True
    while changed:
        changed = False
        for rel, rules in sorted(defs.items()):
            if rel in out:
                continue
            good = True
            for r in rules:
                try:
                    kind = classify_rule(r, p)
                except Exception:
                    good = False
                    break
                if kind == ASYNC or r.aggregate() is not None:
                    good = False
                    break
                for a in r.atoms():
                    if a.negated or (p.is_idb(a.rel) and a.rel not in out):
                        good = False
                        break
                if not good:
                    break
            if good:
                out.add(rel)
                changed = True
    return out


def _threshold_only(rel: str, attr: int, rules: list[Rule], p: Program) -> str | None:
    """None if every use of rel's aggregate attribute is a >= / > test against a constant or EDB value."""
    for i, r in enumerate(rules):
        for a in r.atoms():
            if a.rel != rel:
                continue
            if a.negated:
                return f"rule {i + 1} negates aggregate relation {rel}"
            v = a.args[attr]
            if not isinstance(v, Var):
                return f"rule {i + 1} matches aggregate value of {rel} against a constant"
            edb_vars = {x.name for b in r.atoms() if not p.is_idb(b.rel) for x in b.args if isinstance(x, Var)}
            others = [b for b in r.atoms() if b is not a and v.name in b.vars()]
            if others or v.name in r.head.vars():
                return f"rule {i + 1} uses aggregate value {v.name} outside a threshold test"
            for b in r.body:
                if not isinstance(b, Cmp) or v.name not in b.vars():
                    continue
                ok = False
                for op, mine, other in ((b.op, b.left, b.right), (_flip(b.op), b.right, b.left)):
                    if mine == v and op in (">=", ">") and (
                        isinstance(other, Const) or (isinstance(other, Var) and other.name in edb_vars)
                    ):
                        ok = True
                if not ok:
                    return f"rule {i + 1} compares aggregate value {v.name} non-monotonically"
    return None


def _flip(op: str) -> str:
    return {"<": ">", "<=": ">=", ">": "<", ">=": "<="}.get(op, op)


def is_monotonic(c, p: Program, mode: str = "strict") -> Verdict:
    """Output facts only ever accumulate as the component's inputs accumulate."""
    if mode not in ("strict", "relaxed"):
        raise ValueError(f"unknown mode {mode}")
    rules = _rules(c)
    reasons: list[str] = []
    non_persist_heads = {r.head.rel for r in rules if not is_persistence_rule(r, p)}
    refs = signature(rules, p).referenced
    boundary = sorted(refs - non_persist_heads)
    if mode == "strict":
        persisted = persisted_relations(p) - _gc_relations(p)
    else:
        persisted = logically_persisted(p)
    for r in boundary:
        if r not in persisted:
            reasons.append(f"unpersisted-input {r}")
    for i, r in enumerate(rules):
        for a in r.atoms():
            if a.negated:
                reasons.append(f"negation in rule {i + 1} ({a})")
        agg = r.aggregate()
        if agg is None:
            continue
        if mode == "strict":
            reasons.append(f"aggregation in rule {i + 1} ({agg})")
            continue
        if agg.func not in ("count", "max") or agg.zero:
            reasons.append(f"aggregation in rule {i + 1} ({agg}) is not a monotone threshold")
            continue
        unpersisted = [a.rel for a in r.atoms() if p.is_idb(a.rel) and a.rel not in persisted]
        if unpersisted:
            reasons.append(f"aggregation in rule {i + 1} reads non-persisted {unpersisted[0]}")
            continue
        attr = next(k for k, x in enumerate(r.head.args) if isinstance(x, Agg))
        if r.head.rel not in refs:
            reasons.append(f"aggregate relation {r.head.rel} leaves the component")
            continue
        bad = _threshold_only(r.head.rel, attr, rules, p)
        if bad:
            reasons.append(bad)
    return Verdict(not reasons, reasons)


def is_functional(c, p: Program) -> Verdict:
    """No aggregation or negation and at most one IDB literal per body."""
    reasons = []
    for i, r in enumerate(_rules(c)):
        if r.aggregate() is not None:
            reasons.append(f"aggregation in rule {i + 1}")
        if any(a.negated for a in r.atoms()):
            reasons.append(f"negation in rule {i + 1}")
        n = sum(1 for a in r.atoms() if p.is_idb(a.rel))
        if n > 1:
            reasons.append(f"rule {i + 1} has {n} IDB body literals")
    return Verdict(not reasons, reasons)


# ---------------------------------------------------------------- state machines


def _inductive(r: Rule, p: Program) -> bool:
    return any(is_successor(b, str(r.head.args[-1]), str(a.args[-1])) for b in r.body for a in r.atoms() if p.is_idb(a.rel))


def existence_dependent(c, p: Program, inputs: Iterable[str] | None = None) -> set[str]:
    """Least set of relations that are empty at a tick whenever the inputs are."""
    rules = _rules(c)
    ins = set(inputs) if inputs is not None else set(signature(rules, p).inputs)
    ed = set(ins)
    defs: dict[str, list[Rule]] = {}
    for r in rules:
        defs.setdefault(r.head.rel, []).append(r)
    changed = True
    while changed:
        changed = False
        for rel, rs in sorted(defs.items()):
            if rel in ed:
                continue
            if all(
                not _inductive(r, p) and any(not a.negated and a.rel in ed for a in r.atoms()) for r in rs
            ):
                ed.add(rel)
                changed = True
    return ed


def existence_dependency(rel: str, inputs: Iterable[str], c, p: Program) -> bool:
    ins = set(inputs)
    return rel not in ins and rel in existence_dependent(c, p, ins)


def no_change_dependent(c, p: Program, inputs: Iterable[str] | None = None) -> set[str]:
    rules = _rules(c)
    ins = set(inputs) if inputs is not None else set(signature(rules, p).inputs)
    ed = existence_dependent(rules, p, ins)
    defs: dict[str, list[Rule]] = {}
    for r in rules:
        defs.setdefault(r.head.rel, []).append(r)
    nc: set[str] = set()
    implicit: dict[str, list[Rule]] = {}
    for rel, rs in defs.items():
        if rel in ins:
            continue
        ind = [r for r in rs if _inductive(r, p)]
        if not ind:
            implicit[rel] = rs
            continue
        persist = [r for r in rs if is_persistence_rule(r, p)]
        others = [r for r in rs if not is_persistence_rule(r, p)]
        # explicit persist, with other rules firing only on inputs
        if persist and all(any(not a.negated and a.rel in ed for a in r.atoms()) for r in others):
            nc.add(rel)
    changed = True
    while changed:
        changed = False
        for rel, rs in sorted(implicit.items()):
            if rel in nc:
                continue
            if all(all(not p.is_idb(a.rel) or a.rel in nc for a in r.atoms()) for r in rs):
                nc.add(rel)
                changed = True
    return nc


def no_change_dependency(rel: str, inputs: Iterable[str], c, p: Program) -> bool:
    return rel in no_change_dependent(c, p, set(inputs))


def received_relations(p: Program) -> set[str]:
    """Relations that arrive from outside a tick: async heads and client-injected relations."""
    derived = p.head_relations
    out = {r.head.rel for _, _, r in p.all_rules() if classify_rule(r, p) == ASYNC}
    out |= {r.name for r in p.relations if r.kind == "idb" and r.name not in derived}
    return out | set(p.client)


def state_machine_inputs(c, p: Program) -> frozenset[str]:
    """Component inputs, counting received relations even when the component persists them."""
    sig = signature(_rules(c), p)
    return frozenset(sig.inputs | (sig.referenced & received_relations(p)))


def is_state_machine(c, p: Program) -> Verdict:
    rules = _rules(c)
    sig = signature(rules, p)
    ins = state_machine_inputs(rules, p)
    ed = existence_dependent(rules, p, ins)
    nc = no_change_dependent(rules, p, ins)
    reasons = []
    for rel in sorted(sig.referenced - ins):
        if rel not in ed and rel not in nc:
            reasons.append(f"{rel} has neither an existence nor a no-change dependency")
    # outputs are the channels the component sends on
    sent = {r.head.rel for r in rules if classify_rule(r, p) == ASYNC}
    for rel in sorted(sig.outputs & sent):
        if rel not in ed:
            reasons.append(f"output {rel} lacks an existence dependency")
    return Verdict(not reasons, reasons)


# ---------------------------------------------------------------- dependencies


@dataclass(frozen=True)
class FunctionalDependency:
    """rel[rng] = fn(rel[dom]); fn is a composition of builtins applied left to right."""

    rel: str
    dom: tuple[int, ...]
    rng: int
    fn: tuple[str, ...] = ()

    def __str__(self) -> str:
        g = "*".join(self.fn) if self.fn else "id"
        return f"{self.rel}: {','.join(map(str, self.dom))} -> {self.rng} ({g})"


@dataclass(frozen=True)
class CoPartitionDependency:
    """For facts f1 of r1 and f2 of r2 in one proof tree: f1[b] = fn(f2[a])."""

    r1: str
    b: int
    r2: str
    a: int
    fn: tuple[str, ...] = ()

    def __str__(self) -> str:
        g = "*".join(self.fn) if self.fn else "id"
        return f"{self.r1}.{self.b} <- {g}({self.r2}.{self.a})"


@dataclass
class DependencySet:
    fds: dict[str, frozenset[FunctionalDependency]]
    cds: frozenset[CoPartitionDependency]

    def fds_of(self, rel: str) -> frozenset[FunctionalDependency]:
        return self.fds.get(rel, frozenset())

    def to_dict(self) -> dict:
        return {
            "fds": sorted(str(f) for fs in self.fds.values() for f in fs),
            "cds": sorted(str(c) for c in self.cds),
        }


def _node(x):
    if isinstance(x, Var):
        return x.name
    if isinstance(x, Const):
        return ("const", x.value)
    return None


def _data_args(a: Atom, p: Program):
    return a.args[:-2] if p.is_idb(a.rel) else a.args


def rule_closure(r: Rule, p: Program, fds: dict[str, Iterable[FunctionalDependency]]) -> dict:
    """Map node -> {(node', fn)} with node' = fn(node) on every satisfying binding."""
    edges: dict = {}

    def add(x, y, fn):
        if x is None or y is None:
            return
        edges.setdefault(x, set()).add((y, fn))

    for a in r.atoms():
        if a.negated:
            continue
        data = _data_args(a, p)
        for fd in fds.get(a.rel, ()):
            if len(fd.dom) != 1 or max(fd.dom[0], fd.rng) >= len(data):
                continue
            add(_node(data[fd.dom[0]]), _node(data[fd.rng]), fd.fn)
    for b in r.body:
        if isinstance(b, Cmp) and b.op == "=":
            x, y = _node(b.left), _node(b.right)
            if x is not None and y is not None:
                add(x, y, ())
                add(y, x, ())
    closure: dict = {}
    nodes = set(edges) | {y for vs in edges.values() for y, _ in vs}
    for a in r.atoms():
        for x in a.args:
            n = _node(x)
            if n is not None:
                nodes.add(n)
    for start in nodes:
        seen = {(start, ())}
        frontier = [(start, ())]
        while frontier:
            nxt = []
            for x, fn in frontier:
                for y, g in edges.get(x, ()):
                    h = fn + g
                    if len(h) > MAX_FN_LEN or (y, h) in seen:
                        continue
                    seen.add((y, h))
                    nxt.append((y, h))
            frontier = nxt
        closure[start] = seen
    return closure


def _fn_tags(p: Program) -> list[tuple[str, ...]]:
    names = sorted({f.fn for f in p.fds if f.fn != "id"})
    out = [()]
    for n in range(1, MAX_FN_LEN + 1):
        out += [tuple(x) for x in itertools.product(names, repeat=n)]
    return out


def _head_fds(r: Rule, p: Program, closure: dict) -> set[FunctionalDependency]:
    data = r.head.args[:-2]
    out = set()
    for i, x in enumerate(data):
        if not isinstance(x, Var):
            continue
        for j, y in enumerate(data):
            if i == j or not isinstance(y, Var):
                continue
            for node, fn in closure.get(x.name, ()):
                if node == y.name:
                    out.add(FunctionalDependency(r.head.rel, (i,), j, fn))
    return out


def infer_dependencies(p: Program) -> DependencySet:
    """FDs by greatest fixpoint over defining rules, then per-pair CDs."""
    base: dict[str, set[FunctionalDependency]] = {}
    for f in p.fds:
        fn = () if f.fn == "id" else (f.fn,)
        base.setdefault(f.rel, set()).add(FunctionalDependency(f.rel, f.dom, f.rng, fn))
    defs: dict[str, list[Rule]] = {}
    for _, _, r in p.all_rules():
        defs.setdefault(r.head.rel, []).append(r)
    tags = _fn_tags(p)
    cur: dict[str, set[FunctionalDependency]] = {k: set(v) for k, v in base.items()}
    for rel in defs:
        arity = p.rel(rel).arity - 2
        top = {
            FunctionalDependency(rel, (i,), j, fn)
            for i in range(arity)
            for j in range(arity)
            if i != j
            for fn in tags
        }
        cur[rel] = top | base.get(rel, set())
    # relations referenced but never derived in the program carry only annotations
    changed = True
    while changed:
        changed = False
        for rel in sorted(defs):
            derived = None
            for r in defs[rel]:
                got = _head_fds(r, p, rule_closure(r, p, cur))
                derived = got if derived is None else derived & got
            new = (derived or set()) | base.get(rel, set())
            new &= cur[rel] | base.get(rel, set())
            if new != cur[rel]:
                cur[rel] = new
                changed = True
    fds = {k: frozenset(v) for k, v in cur.items() if v}
    cds = _infer_cds(p, fds)
    return DependencySet(fds, cds)


def _infer_cds(p: Program, fds) -> frozenset[CoPartitionDependency]:
    per_pair: dict[tuple[str, str], set | None] = {}
    for _, _, r in p.all_rules():
        closure = rule_closure(r, p, fds)
        atoms = [a for a in r.atoms() if p.is_idb(a.rel) and not a.negated]
        if classify_rule(r, p) != ASYNC:
            atoms.append(r.head)
        found: dict[tuple[str, str], set] = {}
        for a1, a2 in itertools.permutations(atoms, 2):
            if a1.rel == a2.rel:
                continue
            key = (a1.rel, a2.rel)
            s = found.setdefault(key, set())
            for ia, x in enumerate(a2.args[:-2]):
                if not isinstance(x, Var):
                    continue
                for ib, y in enumerate(a1.args[:-2]):
                    if not isinstance(y, Var):
                        continue
                    for node, fn in closure.get(x.name, ()):
                        if node == y.name:
                            s.add(CoPartitionDependency(a1.rel, ib, a2.rel, ia, fn))
        for key, s in found.items():
            prev = per_pair.get(key)
            per_pair[key] = s if prev is None else prev & s
    return frozenset(c for s in per_pair.values() if s for c in s)


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class PartitionKey:
    attr: int
    fn: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"{'*'.join(self.fn)}({self.attr})" if self.fn else str(self.attr)


@dataclass
class DistributionPolicy:
    """Relation -> partition key; D(f) = nodes[stable_hash(fn(f[attr])) % len(nodes)]."""

    keys: dict[str, PartitionKey]
    nodes: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "keys": {k: str(v) for k, v in sorted(self.keys.items())}}


@dataclass
class PolicyResult:
    policy: DistributionPolicy | None
    blocking_rule: int | None = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.policy is not None

    def to_dict(self) -> dict:
        if self.policy:
            return {"ok": True, **self.policy.to_dict()}
        return {"ok": False, "blocking_rule": self.blocking_rule, "reason": self.reason}


def _colocated_atoms(r: Rule, p: Program, refs: set[str]) -> list[Atom]:
    """Referenced atoms of the rule that must share a node: body IDB atoms plus a local head."""
    atoms = [a for a in r.atoms() if p.is_idb(a.rel) and a.rel in refs]
    if classify_rule(r, p) != ASYNC and r.head.rel in refs:
        atoms.append(r.head)
    return atoms


def _key_equal(a1: Atom, k1: PartitionKey, a2: Atom, k2: PartitionKey, closure: dict, cd: bool) -> bool:
    x, y = a1.args[k1.attr], a2.args[k2.attr]
    if not isinstance(x, Var) or not isinstance(y, Var):
        return False
    if not cd:
        return x == y and k1.fn == k2.fn
    if x == y and k1.fn == k2.fn:
        return True
    # k1.fn(x) = k2.fn(y) if y = g(x) with g;k2.fn == k1.fn, or the mirror case
    for node, g in closure.get(x.name, ()):
        if node == y.name and g + k2.fn == k1.fn:
            return True
    for node, g in closure.get(y.name, ()):
        if node == x.name and g + k1.fn == k2.fn:
            return True
    return False


def find_distribution_policy(
    c,
    p: Program,
    deps: DependencySet | None = None,
    nodes: Iterable[str] = (),
    mode: str = "cohash",
    replicated: Iterable[str] = (),
) -> PolicyResult:
    """Search per-relation partition keys satisfying every rule of the component.

    Relations in `replicated` are present on every node and impose no constraint.
    """
    if mode not in ("cohash", "cd"):
        raise ValueError(f"unknown mode {mode}")
    cd = mode == "cd"
    rules = _rules(c)
    refs = set(signature(rules, p).referenced) - set(replicated)
    deps = deps or infer_dependencies(p)
    fds = dict(deps.fds) if cd else {}
    keyable = computable_tags(p)
    tags = [t for t in _fn_tags(p) if all(n in keyable for n in t)] if cd else [()]
    ctx = []
    for i, r in enumerate(rules):
        atoms = _colocated_atoms(r, p, refs)
        if len(atoms) > 1:
            ctx.append((i, atoms, rule_closure(r, p, fds) if cd else {}))
    rels = sorted(refs)
    cands = {
        rel: sorted(
            (PartitionKey(a, fn) for a in range(p.rel(rel).arity - 2) for fn in tags),
            key=lambda k: (len(k.fn), k.attr, k.fn),
        )
        for rel in rels
    }
    # precheck: every pair in every rule must admit some common key
    for i, atoms, closure in ctx:
        for a1, a2 in itertools.combinations(atoms, 2):
            if not any(
                _key_equal(a1, k1, a2, k2, closure, cd)
                for k1 in cands[a1.rel]
                for k2 in cands[a2.rel]
                if a1.rel != a2.rel or k1 == k2
            ):
                return PolicyResult(None, i, f"{a1.rel} and {a2.rel} share no keys in rule {i + 1}")
    assign: dict[str, PartitionKey] = {}
    worst = [None]

    def consistent() -> bool:
        for i, atoms, closure in ctx:
            for a1, a2 in itertools.combinations(atoms, 2):
                k1, k2 = assign.get(a1.rel), assign.get(a2.rel)
                if k1 is None or k2 is None:
                    continue
                if not _key_equal(a1, k1, a2, k2, closure, cd):
                    if worst[0] is None or i < worst[0]:
                        worst[0] = i
                    return False
        return True

    def dfs(k: int) -> bool:
        if k == len(rels):
            return True
        for key in cands[rels[k]]:
            assign[rels[k]] = key
            if consistent() and dfs(k + 1):
                return True
            del assign[rels[k]]
        return False

    if dfs(0):
        return PolicyResult(DistributionPolicy(dict(assign), tuple(nodes)))
    i = worst[0] if worst[0] is not None else 0
    return PolicyResult(None, i, f"no key assignment satisfies rule {i + 1}")
