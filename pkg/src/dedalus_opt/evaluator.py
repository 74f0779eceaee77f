"""Deterministic lockstep simulator for dialect programs.

Every node advances on one shared virtual clock. Within a timestep the
synchronous rules of the node's components run to a fixpoint, stratum by
stratum. Sequential rules feed the next timestep and asynchronous rules emit
messages whose arrival time comes from a DelaySchedule.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .ast import Agg, Atom, BinOp, Cmp, Const, Delay, Program, Rule, Value, Var, format_value, value_key
from .builtins import FunctionTable
from .dialect import ASYNC, SEQ, SYNC, body_space_time, classify_rule, is_persistence_rule, is_successor


class EvalError(Exception):
    pass


class StratificationError(EvalError):
    pass


# ---------------------------------------------------------------- facts


@dataclass(frozen=True, order=False)
class Fact:
    rel: str
    values: tuple
    loc: str | None = None
    time: int | None = None

    def sort_key(self):
        return (
            self.time if self.time is not None else -1,
            self.rel,
            tuple(value_key(v) for v in self.values),
            self.loc or "",
        )

    def __str__(self) -> str:
        vals = list(self.values)
        if self.loc is not None:
            vals += [self.loc, self.time]
        return f"{self.rel}({','.join(format_value(v, quote=True) for v in vals)})"


def fact_sort_key(rel: str, values: tuple):
    return (rel, tuple(value_key(v) for v in values))


# ---------------------------------------------------------------- schedules


class DelaySchedule:
    """Maps a message identity to an arrival time strictly after its send time."""

    mode = "abstract"

    def arrival(self, key: tuple, send: int) -> int:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"mode": self.mode}


class SeededSchedule(DelaySchedule):
    """arrival = send + 1 + h(seed, key) mod max_delay, independent of evaluation order."""

    mode = "seeded-random"

    def __init__(self, seed: int, max_delay: int = 1):
        if max_delay < 1:
            raise ValueError("max_delay must be >= 1")
        self.seed = seed
        self.max_delay = max_delay

    def arrival(self, key: tuple, send: int) -> int:
        h = hashlib.blake2b(repr((self.seed, key_text(key))).encode(), digest_size=8).digest()
        return send + 1 + int.from_bytes(h, "big") % self.max_delay

    def describe(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "max_delay": self.max_delay}


class TableSchedule(DelaySchedule):
    """Explicit table keyed by the canonical message text; `default` delay if given."""

    mode = "explicit-table"

    def __init__(self, table: dict[str, int], default: int | None = None):
        self.table = dict(table)
        self.default = default
        self.used: dict[str, int] = {}

    def arrival(self, key: tuple, send: int) -> int:
        k = key_text(key)
        if k in self.table:
            arr = self.table[k]
        elif self.default is not None:
            arr = send + self.default
        else:
            raise EvalError(f"schedule has no entry for message {k}")
        if arr <= send:
            raise EvalError(f"arrival {arr} does not follow send time {send} for {k}")
        self.used[k] = arr
        return arr

    def describe(self) -> dict:
        return {"mode": self.mode, "table": dict(sorted(self.used.items()))}


class ChoiceSchedule(DelaySchedule):
    """Consumes a choice sequence: the k-th message gets delay 1 + choices[k].

    Messages past the end of the sequence take delay 1; the number of choice
    points met is recorded so an enumerator can extend the sequence.
    """

    mode = "exhaustive-enumeration"

    def __init__(self, choices: Iterable[int], max_delay: int, index: int = 0):
        self.choices = list(choices)
        self.max_delay = max_delay
        self.index = index
        self.points = 0
        self.log: dict[str, int] = {}
        self.taken: list[int] = []

    def arrival(self, key: tuple, send: int) -> int:
        k = self.points
        self.points += 1
        c = self.choices[k] if k < len(self.choices) else 0
        if not 0 <= c < self.max_delay:
            raise EvalError(f"choice {c} outside 0..{self.max_delay - 1}")
        self.taken.append(c)
        self.log[key_text(key)] = send + 1 + c
        return send + 1 + c

    def describe(self) -> dict:
        return {"mode": self.mode, "index": self.index, "choices": list(self.taken), "max_delay": self.max_delay}


def key_text(key: tuple) -> str:
    rel, vals, dtuple = key
    v = ",".join(format_value(x, quote=True) for x in vals)
    d = ",".join(format_value(x, quote=True) for x in dtuple)
    return f"{rel}({v})@({d})"


def enumerate_choice_sequences(max_delay: int, run_points, limit: int | None = None):
    """Depth-first enumeration of every delay assignment.

    `run_points(choices)` runs with a prefix and returns how many choice points
    the run met. Yields each complete choice list in lexicographic order.
    """
    choices: list[int] = []
    count = 0
    while True:
        n = run_points(choices)
        full = choices + [0] * (n - len(choices))
        yield full[:n]
        count += 1
        if limit is not None and count >= limit:
            return
        # odometer increment on the full sequence
        full = full[:n]
        i = n - 1
        while i >= 0 and full[i] == max_delay - 1:
            i -= 1
        if i < 0:
            return
        choices = full[:i] + [full[i] + 1]


# ---------------------------------------------------------------- compiled rules


def _eval(e, b):
    if isinstance(e, Var):
        return b[e.name]
    if isinstance(e, Const):
        return e.value
    left, right = _eval(e.left, b), _eval(e.right, b)
    return left + right if e.op == "+" else left - right


def _cmp(op, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    ka, kb = value_key(a), value_key(b)
    return {"<": ka < kb, "<=": ka <= kb, ">": ka > kb, ">=": ka >= kb}[op]


def _vars_of(e) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, BinOp):
        return _vars_of(e.left) | _vars_of(e.right)
    return set()


@dataclass
class CompiledRule:
    rid: tuple[str, int]
    rule: Rule
    kind: str
    lvar: str
    tvar: str
    steps: list
    delay: Delay | None
    agg: Agg | None
    persistence: bool
    # positive IDB body relations; an empty one means no bindings at all
    needs: tuple[str, ...] = ()


def compile_rule(rid, rule: Rule, p: Program) -> CompiledRule:
    kind = classify_rule(rule, p)
    l, t = body_space_time(rule, p)
    bound = {l, t}
    pending = [b for b in rule.body if not isinstance(b, Delay)]
    steps = []
    while pending:
        pick = None
        # cheap filters first, then bindings, negation last
        for b in pending:
            if isinstance(b, Cmp) and b.vars() <= bound:
                pick = ("filter", b)
                break
        if pick is None:
            for b in pending:
                if isinstance(b, Cmp) and b.op == "=":
                    if isinstance(b.left, Var) and b.left.name not in bound and _vars_of(b.right) <= bound:
                        pick = ("assign", b.left.name, b.right)
                        break
                    if isinstance(b.right, Var) and b.right.name not in bound and _vars_of(b.left) <= bound:
                        pick = ("assign", b.right.name, b.left)
                        break
        if pick is None:
            for b in pending:
                if isinstance(b, Atom) and not b.negated and p.is_function(b.rel):
                    n_in = p.rel(b.rel).n_in
                    if set().union(*[_vars_of(x) for x in b.args[:n_in]]) <= bound:
                        pick = ("func", b)
                        break
        if pick is None:
            best = None
            for b in pending:
                if isinstance(b, Atom) and not b.negated and not p.is_function(b.rel):
                    nb = sum(1 for x in b.args if not isinstance(x, Var) or x.name in bound)
                    score = (p.is_idb(b.rel), nb)
                    if best is None or score > best[0]:
                        best = (score, b)
            if best is not None:
                pick = ("scan", best[1])
        if pick is None:
            for b in pending:
                if isinstance(b, Atom) and b.negated:
                    pick = ("neg", b)
                    break
        if pick is None:
            raise EvalError(f"cannot order body of rule {rule}: unbound inputs in {pending}")
        lit = pick[1] if pick[0] != "assign" else None
        steps.append(pick)
        if pick[0] == "assign":
            bound.add(pick[1])
            pending = [b for b in pending if not (isinstance(b, Cmp) and b.op == "=" and pick[1] in b.vars() and (b.left == pick[2] or b.right == pick[2]))]
            continue
        pending.remove(lit)
        if pick[0] in ("scan", "func"):
            bound |= lit.vars()
    delay = next((b for b in rule.body if isinstance(b, Delay)), None)
    agg = rule.aggregate()
    needs = () if agg is not None and agg.zero else tuple(
        sorted({a.rel for a in rule.atoms() if not a.negated and p.is_idb(a.rel)})
    )
    return CompiledRule(rid, rule, kind, l, t, steps, delay, agg, is_persistence_rule(rule, p), needs)


def _unify(args, vals, b: dict) -> dict | None:
    nb = None
    for a, v in zip(args, vals):
        if isinstance(a, Var):
            cur = (nb or b).get(a.name, _MISSING)
            if cur is _MISSING:
                if nb is None:
                    nb = dict(b)
                nb[a.name] = v
            elif cur != v:
                return None
        elif isinstance(a, Const):
            if a.value != v:
                return None
        else:
            if _eval(a, nb or b) != v:
                return None
    return nb if nb is not None else dict(b)


_MISSING = object()


# ---------------------------------------------------------------- stratification


def dependency_edges(p: Program, kinds=(SYNC,)):
    """(body_rel, head_rel, strict) for rules of the given kinds."""
    agg_rels = {r.head.rel for _, _, r in p.all_rules() if r.aggregate() is not None}
    edges = []
    for _, _, r in p.all_rules():
        try:
            k = classify_rule(r, p)
        except Exception:
            continue
        if k not in kinds:
            continue
        for a in r.atoms():
            if not p.is_idb(a.rel):
                continue
            strict = a.negated or r.aggregate() is not None or a.rel in agg_rels
            edges.append((a.rel, r.head.rel, strict))
    return edges


def stratify(p: Program) -> dict[str, int]:
    """Stratum per IDB relation within a timestep.

    Negation and aggregation edges strictly increase the stratum, and so does
    consuming an aggregate relation. Only synchronous rules constrain cycles;
    relations defined solely by sequential or asynchronous rules are placed
    above their bodies for reporting.
    """
    idb = sorted(r.name for r in p.relations if r.kind == "idb")
    sync_edges = dependency_edges(p, (SYNC,))
    stratum = {r: 0 for r in idb}
    n = len(idb)
    for _ in range(n + 1):
        changed = False
        for a, h, strict in sync_edges:
            need = stratum[a] + (1 if strict else 0)
            if stratum[h] < need:
                stratum[h] = need
                changed = True
                if stratum[h] > n:
                    raise StratificationError(f"cycle through negation or aggregation at {h}")
        if not changed:
            break
    else:
        raise StratificationError("program is not stratifiable")
    sync_heads = {h for _, h, _ in sync_edges}
    other = dependency_edges(p, (SEQ, ASYNC))
    for _ in range(n + 1):
        changed = False
        for a, h, strict in other:
            if h in sync_heads or a == h:
                continue
            need = stratum[a] + (1 if strict else 0)
            if stratum[h] < need:
                stratum[h] = need
                changed = True
        if not changed:
            break
    return stratum


def absorbed_relations(p: Program) -> frozenset[str]:
    """Received relations whose every consumer copies them into a persisted relation.

    Re-delivering content such a relation already received changes nothing
    else, so endless resends of persisted state do not keep a run unsettled.
    """
    persisted = {r.head.rel for _, _, r in p.all_rules() if is_persistence_rule(r, p)} - {g.rel for g in p.gcs}
    received = {r.head.rel for _, _, r in p.all_rules() if any(isinstance(b, Delay) for b in r.body)}
    out = set()
    for rel in received:
        users = [r for _, _, r in p.all_rules() if any(a.rel == rel for a in r.atoms())]
        if users and all(
            len(r.body) == 1
            and not r.body[0].negated
            and r.body[0].rel == rel
            and r.head.args == r.body[0].args
            and r.head.rel in persisted
            for r in users
        ):
            out.add(rel)
    return frozenset(out)


# ---------------------------------------------------------------- instances


@dataclass
class HistoryRecord:
    kind: str  # "in" or "out"
    rel: str
    values: tuple
    loc: str
    send: int
    arrival: int

    def line(self) -> str:
        vals = ",".join(format_value(v, quote=True) for v in self.values)
        return f"{self.arrival}\t{self.kind}\t{self.rel}({vals})@{self.loc}\tsent={self.send}"

    def sort_key(self):
        return (self.arrival, self.rel, tuple(value_key(v) for v in self.values), self.kind, self.loc, self.send)


@dataclass
class History:
    records: list[HistoryRecord]
    truncated: bool
    quiescent_at: int | None
    horizon: int
    schedule: dict = field(default_factory=dict)
    # output contents (rel, values, dest) re-sent every tick after quiescent_at
    resends: tuple = ()

    def serialize(self) -> str:
        lines = [f"# horizon={self.horizon} truncated={int(self.truncated)} quiescent_at={self.quiescent_at}"]
        for rel, vals, dest in self.resends:
            v = ",".join(format_value(x, quote=True) for x in vals)
            lines.append(f"# resend\t{rel}({v})@{dest}")
        lines += [r.line() for r in sorted(self.records, key=HistoryRecord.sort_key)]
        return "\n".join(lines) + "\n"

    def outputs(self) -> list[HistoryRecord]:
        return sorted((r for r in self.records if r.kind == "out"), key=HistoryRecord.sort_key)

    def inputs(self) -> list[HistoryRecord]:
        return sorted((r for r in self.records if r.kind == "in"), key=HistoryRecord.sort_key)


@dataclass
class Instance:
    """Facts per (location, time) plus an optional provenance index."""

    state: dict[tuple[str, int], dict[str, set]] = field(default_factory=dict)
    provenance: dict[Fact, set] = field(default_factory=dict)
    sends: list[tuple[Fact, int]] = field(default_factory=list)  # (arrived fact, send time)

    def at(self, loc: str, t: int) -> dict[str, set]:
        return self.state.get((loc, t), {})

    def facts(self) -> list[Fact]:
        out = []
        for (loc, t), rels in self.state.items():
            for rel, tuples in rels.items():
                for v in tuples:
                    out.append(Fact(rel, v, loc, t))
        return sorted(out, key=Fact.sort_key)

    def relation(self, rel: str) -> list[Fact]:
        return [f for f in self.facts() if f.rel == rel]

    def serialize(self) -> str:
        return "".join(str(f) + "\n" for f in self.facts())


# ---------------------------------------------------------------- engine


@dataclass
class RunResult:
    instance: Instance
    history: History


class Engine:
    """Compiled program plus the per-run evaluation machinery."""

    def __init__(self, p: Program, extra_facts: Iterable[tuple[str, tuple]] = ()):
        if any(isinstance(a, Agg) and a.func == "seal" for _, _, r in p.all_rules() for a in r.head.args):
            raise EvalError("seal must be desugared before evaluation")
        self.p = p
        self.strata = stratify(p)
        self.funcs = FunctionTable(p)
        self.edb: dict[str, set] = {}
        for rel, vals in list(p.facts) + list(extra_facts):
            r = p.rel(rel)
            if r is not None and r.kind == "edb":
                self.edb.setdefault(rel, set()).add(tuple(vals))
        self.nodes: dict[str, list[CompiledRule]] = {}
        self.compiled: list[CompiledRule] = []
        for comp in p.components:
            crs = [compile_rule((comp.name, i), r, p) for i, r in enumerate(comp.rules)]
            self.compiled += crs
            for a in comp.addrs:
                self.nodes.setdefault(a, []).extend(crs)
        # nodes that derive nothing from an empty state
        self._plans: dict[str, list] = {}
        self.inert = {a for a, crs in self.nodes.items() if all(cr.needs for cr in crs)}
        self.gc = {}
        for g in p.gcs:
            self.gc.setdefault(g.rel, []).append(g)
        self.absorbed = absorbed_relations(p)

    def sync_plan(self, loc: str) -> list[tuple[list[CompiledRule], bool]]:
        """Synchronous rules per stratum, in dependency order; a cyclic group must iterate."""
        if loc in self._plans:
            return self._plans[loc]
        by_stratum: dict[int, list[CompiledRule]] = {}
        for cr in self.nodes.get(loc, []):
            if cr.kind == SYNC:
                by_stratum.setdefault(self.strata[cr.rule.head.rel], []).append(cr)
        plan = []
        for s in sorted(by_stratum):
            group = by_stratum[s]
            heads = {cr.rule.head.rel for cr in group}
            deps = {h: set() for h in heads}
            for cr in group:
                deps[cr.rule.head.rel] |= {a.rel for a in cr.rule.atoms() if a.rel in heads}
            order: list[str] = []
            done: set[str] = set()
            while len(done) < len(heads):
                ready = sorted(h for h in heads - done if deps[h] <= done)
                if not ready:
                    break
                order += ready
                done |= set(ready)
            if len(done) < len(heads):
                plan.append((group, True))
            else:
                rank = {h: i for i, h in enumerate(order)}
                plan.append((sorted(group, key=lambda cr: rank[cr.rule.head.rel]), False))
        self._plans[loc] = plan
        return plan

    # -- body evaluation
    def solve(self, cr: CompiledRule, st: dict[str, set], loc: str, t: int) -> list[dict]:
        for rel in cr.needs:
            if not st.get(rel):
                return []
        bindings = [{cr.lvar: loc, cr.tvar: t}]
        for step in cr.steps:
            kind = step[0]
            nxt = []
            if kind == "filter":
                c = step[1]
                nxt = [b for b in bindings if _cmp(c.op, _eval(c.left, b), _eval(c.right, b))]
            elif kind == "assign":
                for b in bindings:
                    nb = dict(b)
                    nb[step[1]] = _eval(step[2], b)
                    nxt.append(nb)
            elif kind == "func":
                a = step[1]
                n_in = self.p.rel(a.rel).n_in
                for b in bindings:
                    ins = tuple(_eval(x, b) for x in a.args[:n_in])
                    for outs in self.funcs.call(a.rel, ins):
                        nb = _unify(a.args[n_in:], outs, b)
                        if nb is not None:
                            nxt.append(nb)
            elif kind == "scan":
                a = step[1]
                idb = self.p.is_idb(a.rel)
                src = st.get(a.rel, ()) if idb else self.edb.get(a.rel, ())
                args = a.args[:-2] if idb else a.args
                for b in bindings:
                    for vals in src:
                        nb = _unify(args, vals, b)
                        if nb is not None:
                            nxt.append(nb)
            elif kind == "neg":
                a = step[1]
                for b in bindings:
                    if not self._exists(a, st, b):
                        nxt.append(b)
            bindings = nxt
            if not bindings:
                break
        return bindings

    def _exists(self, a: Atom, st, b) -> bool:
        if self.p.is_function(a.rel):
            n_in = self.p.rel(a.rel).n_in
            try:
                ins = tuple(_eval(x, b) for x in a.args[:n_in])
            except KeyError:
                raise EvalError(f"negated function {a.rel} with unbound inputs")
            return any(_unify(a.args[n_in:], outs, b) is not None for outs in self.funcs.call(a.rel, ins))
        idb = self.p.is_idb(a.rel)
        src = st.get(a.rel, ()) if idb else self.edb.get(a.rel, ())
        args = a.args[:-2] if idb else a.args
        return any(_unify(args, vals, b) is not None for vals in src)

    def heads(self, cr: CompiledRule, bindings: list[dict], loc: str, t: int):
        """Yield (values, location, time-or-None, binding-representative) per head fact."""
        if not bindings and cr.needs:
            return []
        head = cr.rule.head
        data = head.args[:-2]
        hl = head.args[-2].name
        if cr.agg is None:
            seen = {}
            for b in bindings:
                vals = tuple(_eval(x, b) for x in data)
                dest = b[hl]
                ht = None if cr.kind == ASYNC else b[head.args[-1].name]
                seen.setdefault((vals, dest, ht), []).append(b)
            return [(k[0], k[1], k[2], bs) for k, bs in seen.items()]
        agg = cr.agg
        groups: dict[tuple, list[dict]] = {}
        for b in bindings:
            key = tuple(None if isinstance(x, Agg) else _eval(x, b) for x in data)
            dest = b[hl]
            groups.setdefault((key, dest), []).append(b)
        out = []
        if not groups and agg.zero:
            key = tuple(None if isinstance(x, Agg) else None for x in data)
            if all(isinstance(x, Agg) for x in data):
                base = {cr.lvar: loc, cr.tvar: t}
                ht = None if cr.kind == ASYNC else t + (1 if cr.kind == SEQ else 0)
                vals = tuple(0 for _ in data)
                if hl == cr.lvar:
                    out.append((vals, loc, ht, [base]))
            return out
        for (key, dest), bs in groups.items():
            value = _aggregate(agg, bs)
            vals = tuple(value if isinstance(x, Agg) else k for x, k in zip(data, key))
            ht = None if cr.kind == ASYNC else bs[0][head.args[-1].name]
            out.append((vals, dest, ht, bs))
        return out

    def body_facts(self, cr: CompiledRule, b: dict, loc: str, t: int) -> tuple[Fact, ...]:
        out = []
        for a in cr.rule.atoms():
            if a.negated or self.p.is_function(a.rel):
                continue
            if self.p.is_idb(a.rel):
                out.append(Fact(a.rel, tuple(_eval(x, b) for x in a.args[:-2]), loc, t))
            else:
                out.append(Fact(a.rel, tuple(_eval(x, b) for x in a.args)))
        return tuple(out)


def _aggregate(agg: Agg, bs: list[dict]):
    if agg.func in ("count", "cert"):
        vals = {tuple(b[v] for v in agg.vars) for b in bs}
        if agg.func == "count":
            return len(vals)
        flat = sorted((v[0] if len(v) == 1 else v for v in vals), key=value_key)
        return tuple(flat)
    if agg.func == "sum":
        distinct = {tuple(sorted(b.items())) for b in bs}
        return sum(dict(d)[agg.vars[0]] for d in distinct)
    vals = [b[agg.vars[0]] for b in bs]
    if agg.func == "max":
        return max(vals, key=value_key)
    if agg.func == "min":
        return min(vals, key=value_key)
    raise EvalError(f"unsupported aggregate {agg.func}")


# ---------------------------------------------------------------- stepping


@dataclass(frozen=True)
class Message:
    rel: str
    values: tuple
    src: str
    dest: str
    send: int
    key: tuple

    def sort_key(self):
        return (key_text(self.key), self.src)


@dataclass(frozen=True)
class InputFact:
    """An externally injected fact: `rel(values)` present at `loc` during tick `time`."""

    rel: str
    values: tuple
    loc: str
    time: int


def _add_fact(st: dict[str, set], rel: str, vals: tuple) -> bool:
    s = st.setdefault(rel, set())
    if vals in s:
        return False
    s.add(vals)
    return True


class Run:
    """Mutable per-run evaluation state for one Engine."""

    def __init__(self, engine: Engine, provenance: bool = False):
        self.e = engine
        self.inst = Instance()
        self.track = provenance
        self._pending_prov: dict[tuple, tuple] = {}

    def _derive(self, fact: Fact, cr: CompiledRule, bs: list[dict], loc: str, t: int) -> None:
        if not self.track:
            return
        ds = self.inst.provenance.setdefault(fact, set())
        for b in bs:
            ds.add((cr.rid, self.e.body_facts(cr, b, loc, t)))

    def step_node(self, loc: str, t: int, base: dict[str, set]):
        """Fixpoint at (loc, t). Returns (state, carry for t+1, outgoing messages)."""
        e = self.e
        rules = e.nodes.get(loc, [])
        st = {k: set(v) for k, v in base.items()}
        for group, recursive in e.sync_plan(loc):
            changed = True
            while changed:
                changed = False
                for cr in group:
                    for vals, _, _, bs in e.heads(cr, e.solve(cr, st, loc, t), loc, t):
                        if _add_fact(st, cr.rule.head.rel, vals):
                            changed = True
                        self._derive(Fact(cr.rule.head.rel, vals, loc, t), cr, bs, loc, t)
                changed = changed and recursive
        carry: dict[str, set] = {}
        out: list[Message] = []
        for cr in rules:
            if cr.kind == SYNC:
                continue
            heads = e.heads(cr, e.solve(cr, st, loc, t), loc, t)
            rel = cr.rule.head.rel
            if cr.kind == SEQ:
                guards = e.gc.get(rel, []) if cr.persistence else []
                for vals, _, ht, bs in heads:
                    if ht != t + 1:
                        raise EvalError(f"sequential rule {cr.rule} produced time {ht} at {t}")
                    if any(vals and tuple(vals[i] for i in g.attrs) in st.get(g.guard, ()) for g in guards):
                        continue
                    _add_fact(carry, rel, vals)
                    self._derive(Fact(rel, vals, loc, t + 1), cr, bs, loc, t)
                continue
            for vals, dest, _, bs in heads:
                seen = set()
                for b in bs:
                    dvals = tuple(_eval(x, b) for x in cr.delay.inputs)
                    key = (rel, vals + (dest,), dvals)
                    if key in seen:
                        continue
                    seen.add(key)
                    out.append(Message(rel, vals, loc, dest, t, key))
                    if self.track:
                        self._pending_prov[key] = (cr, [x for x in bs if tuple(_eval(y, x) for y in cr.delay.inputs) == dvals], loc, t)
        return st, carry, out


@dataclass
class RunConfig:
    """Everything needed to reproduce a run besides the program text."""

    inputs: list[InputFact] = field(default_factory=list)
    horizon: int = 50
    mode: str = "seeded-random"
    seed: int = 0
    max_delay: int = 1
    table: dict[str, int] = field(default_factory=dict)
    choices: list[int] = field(default_factory=list)
    input_relations: tuple[str, ...] | None = None
    output_relations: tuple[str, ...] | None = None
    stop_on_quiescence: bool = True
    provenance: bool = False

    def schedule(self) -> DelaySchedule:
        if self.mode == "seeded-random":
            return SeededSchedule(self.seed, self.max_delay)
        if self.mode == "explicit-table":
            return TableSchedule(self.table)
        if self.mode == "exhaustive-enumeration":
            return ChoiceSchedule(self.choices, self.max_delay)
        raise ValueError(f"unknown schedule mode {self.mode!r}")


def default_outputs(p: Program) -> set[str]:
    """Client-facing asynchronous relations; without a @client list, unconsumed ones."""
    if p.client:
        return {c for c in p.client if c in p.head_relations}
    nodes = {a for c in p.components for a in c.addrs}
    outs = set()
    for _, _, r in p.all_rules():
        if any(isinstance(b, Delay) for b in r.body):
            outs.add(r.head.rel)
    # a relation also consumed by some component is internal unless declared client-facing
    consumed = {a.rel for _, _, r in p.all_rules() for a in r.atoms()}
    return {o for o in outs if o not in consumed} if nodes else outs


def default_inputs(p: Program) -> set[str]:
    if p.client:
        return {c for c in p.client if c not in p.head_relations}
    return {r.name for r in p.relations if r.kind == "idb" and r.name not in p.head_relations}


def run(
    p: Program,
    inputs: Iterable[InputFact],
    schedule: DelaySchedule,
    horizon: int,
    input_relations: Iterable[str] | None = None,
    output_relations: Iterable[str] | None = None,
    stop_on_quiescence: bool = True,
    provenance: bool = False,
    engine: Engine | None = None,
    sink_delay: int | None = None,
) -> RunResult:
    """Execute every node on a shared clock for ticks 0..horizon-1.

    The run stops early once it settles: no messages in flight between nodes
    other than repeats of absorbed content already delivered, all inputs injected, state equal to the previous tick, and the messages
    leaving for clients (if any) the same as the previous tick's. From then on
    the run would repeat that tick forever; those repeated sends are reported
    as `resends`. With `sink_delay`, messages to non-node addresses take that
    delay without consulting the schedule.
    """
    e = engine or Engine(p)
    r = Run(e, provenance)
    in_rels = set(input_relations) if input_relations is not None else default_inputs(p)
    out_rels = set(output_relations) if output_relations is not None else default_outputs(p)
    nodes = sorted(e.nodes)
    injected: dict[int, list[InputFact]] = {}
    for f in inputs:
        if f.loc not in e.nodes:
            raise EvalError(f"input {f.rel} addressed to unknown node {f.loc}")
        if not p.is_idb(f.rel) or p.rel(f.rel).arity != len(f.values) + 2:
            raise EvalError(f"input {f.rel}{f.values} does not match a declared relation")
        injected.setdefault(f.time, []).append(f)
    records: list[HistoryRecord] = []
    carry: dict[str, dict[str, set]] = {}
    arrivals: dict[int, list[Message]] = {}
    prev_state: dict[str, dict] | None = None
    prev_out: set | None = None
    resends: tuple = ()
    quiescent_at = None
    delivered: set[tuple] = set()
    first: dict[tuple, int] = {}
    last_input = max(injected, default=-1)
    late = False
    t = 0
    for t in range(horizon):
        base = {n: {k: set(v) for k, v in carry.get(n, {}).items()} for n in nodes}
        for f in injected.get(t, []):
            _add_fact(base[f.loc], f.rel, tuple(f.values))
            if f.rel in in_rels:
                records.append(HistoryRecord("in", f.rel, tuple(f.values), f.loc, t, t))
        for m in arrivals.pop(t, []):
            if m.dest in base:
                _add_fact(base[m.dest], m.rel, m.values)
                if m.rel in e.absorbed:
                    delivered.add((m.dest, m.rel, m.values))
        state, carry, outbox = {}, {}, []
        for n in nodes:
            if not base[n] and n in e.inert:
                state[n], carry[n] = {}, {}
                continue
            st, c, out = r.step_node(n, t, base[n])
            state[n] = st
            carry[n] = c
            outbox += out
            r.inst.state[(n, t)] = st
        outbox.sort(key=Message.sort_key)
        seen = set()
        for m in outbox:
            if m.key in seen:
                continue
            seen.add(m.key)
            if sink_delay is not None and m.dest not in e.nodes:
                arr = t + sink_delay
            elif (m.dest, m.rel, m.values) in delivered:
                # a no-op delivery: its timing cannot matter, so it is not a choice
                arr = t + 1
            elif m.rel in e.absorbed and (m.dest, m.rel, m.values) in first:
                # only the earliest copy counts and this one cannot beat the first
                arr = max(first[(m.dest, m.rel, m.values)], t + 1)
            else:
                arr = schedule.arrival(m.key, t)
                if m.rel in e.absorbed:
                    first[(m.dest, m.rel, m.values)] = arr
            if arr <= t:
                raise EvalError("schedule violates happens-before")
            if m.rel in out_rels:
                records.append(HistoryRecord("out", m.rel, m.values, m.dest, t, arr))
            if m.dest in e.nodes:
                arrivals.setdefault(arr, []).append(m)
            late = late or arr >= horizon
            if provenance:
                cr, bs, loc, st_t = r._pending_prov[m.key]
                fact = Fact(m.rel, m.values, m.dest, arr)
                r._derive(fact, cr, bs, loc, st_t)
                r.inst.sends.append((fact, t))
        state = {n: {k: v for k, v in st.items() if v and k not in e.absorbed} for n, st in state.items()}
        out_now = {(m.rel, m.values, m.dest) for m in outbox}
        idle = all((m.dest, m.rel, m.values) in delivered for ms in arrivals.values() for m in ms)
        if stop_on_quiescence and idle and t >= last_input and prev_state == state and prev_out == out_now:
            quiescent_at = t
            resends = tuple(sorted((c for c in out_now if c[0] in out_rels), key=lambda c: fact_sort_key(c[0], c[1]) + (c[2],)))
            break
        prev_state, prev_out = state, out_now
    truncated = late or (quiescent_at is None and any(arrivals.values()))
    hist = History(records, truncated, quiescent_at, horizon, schedule.describe(), resends)
    return RunResult(r.inst, hist)


def run_config(p: Program, cfg: RunConfig, engine: Engine | None = None) -> RunResult:
    return run(
        p,
        cfg.inputs,
        cfg.schedule(),
        cfg.horizon,
        cfg.input_relations,
        cfg.output_relations,
        cfg.stop_on_quiescence,
        cfg.provenance,
        engine,
    )


def enumerate_runs(
    p: Program,
    inputs: list[InputFact],
    horizon: int,
    max_delay: int,
    limit: int | None = None,
    engine: Engine | None = None,
    **kw,
):
    """Yield (choices, RunResult) for every delay assignment with delays in 1..max_delay."""
    e = engine or Engine(p)
    last: dict[str, RunResult] = {}

    def attempt(prefix):
        sched = ChoiceSchedule(prefix, max_delay)
        last["r"] = run(p, inputs, sched, horizon, engine=e, **kw)
        last["n"] = sched.points
        return sched.points

    # a prefix run pads missing choices with 0, so it already is the full run
    for full in enumerate_choice_sequences(max_delay, attempt, limit):
        yield full, last["r"]
