"""Pretty-printing, rule classification and well-formedness checks."""
from __future__ import annotations

from dataclasses import dataclass

from .ast import (
    Agg,
    Atom,
    BinOp,
    Cmp,
    Const,
    Delay,
    Program,
    Rule,
    Var,
    expr_vars,
    format_value,
)
from .parser import DialectError, parse_facts, parse_program  # noqa: F401

SYNC, SEQ, ASYNC = "synchronous", "sequential", "asynchronous"


class ClassifyError(DialectError):
    pass


def pretty_print(p: Program) -> str:
    """Canonical text; parse_program(pretty_print(p)) == p."""
    out: list[str] = []
    policy_names = {x.name for x in p.policies}
    for r in p.relations:
        if r.name in policy_names:
            continue
        if r.kind == "function":
            b = f" : {r.builtin}" if r.builtin else ""
            out.append(f"@function {r.name}/{r.arity} in {r.n_in}{b}.")
        else:
            out.append(f"@{r.kind} {r.name}/{r.arity}.")
    for f in p.fds:
        out.append(f"@fd {f.rel}({', '.join(map(str, f.dom))} -> {f.rng} : {f.fn}).")
    for g in p.gcs:
        out.append(f"@gc {g.rel}({', '.join(map(str, g.attrs))}) : {g.guard}.")
    for rel, idx in p.entangled:
        out.append(f"@entangled {rel}({idx}).")
    if p.client:
        out.append(f"@client {', '.join(p.client)}.")
    for pol in p.policies:
        maps = " ; ".join(
            f"{format_value(src)} -> {' '.join(format_value(d) for d in dsts)}" for src, dsts in pol.mapping
        )
        fn = "*".join(pol.fn) if pol.fn else "id"
        key = ", ".join(map(str, pol.key))
        out.append(f"@policy {pol.name} on {pol.rel} key {key} fn {fn} map {maps}.")
    for rel, vals in p.facts:
        out.append(f"{rel}({','.join(format_value(v) for v in vals)}).")
    for c in p.components:
        addrs = ", ".join(format_value(a) for a in c.addrs)
        out.append(f"component {c.name} @ {addrs} {{")
        for r in c.rules:
            out.append(f"  {r}")
        out.append("}")
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------- rule shape


def idb_atoms(rule: Rule, p: Program, positive_only: bool = False) -> list[Atom]:
    return [a for a in rule.atoms() if p.is_idb(a.rel) and not (positive_only and a.negated)]


def body_space_time(rule: Rule, p: Program) -> tuple[str, str]:
    for a in idb_atoms(rule, p, positive_only=True):
        loc, tim = a.args[-2], a.args[-1]
        if isinstance(loc, Var) and isinstance(tim, Var):
            return loc.name, tim.name
        raise ClassifyError(f"{a.rel}: location/time must be variables")
    raise ClassifyError("rule body has no positive IDB literal to bind location and time")


def is_successor(c, new: str, old: str) -> bool:
    """True for the constraint new = old + 1 in either orientation."""
    if not isinstance(c, Cmp) or c.op != "=":
        return False
    for a, b in ((c.left, c.right), (c.right, c.left)):
        if (
            isinstance(a, Var)
            and a.name == new
            and isinstance(b, BinOp)
            and b.op == "+"
            and isinstance(b.left, Var)
            and b.left.name == old
            and b.right == Const(1)
        ):
            return True
    return False


def classify_rule(rule: Rule, p: Program) -> str:
    """Return synchronous, sequential or asynchronous; raise on ill-formed space-time."""
    if not p.is_idb(rule.head.rel):
        raise ClassifyError(f"head {rule.head.rel} is not an IDB relation")
    if len(rule.head.args) < 2:
        raise ClassifyError("head lacks location/time attributes")
    l, t = body_space_time(rule, p)
    hl, ht = rule.head.args[-2], rule.head.args[-1]
    if not isinstance(hl, Var) or not isinstance(ht, Var):
        raise ClassifyError("head location/time must be variables")
    delays = [b for b in rule.body if isinstance(b, Delay)]
    if len(delays) > 1:
        raise ClassifyError("more than one delay literal")
    if delays:
        if hl.name == l:
            raise ClassifyError("delay present but head location equals body location")
        if delays[0].out.name != ht.name or ht.name == t:
            raise ClassifyError("delay output must bind the head time")
        if not any(
            isinstance(b, Atom) and not b.negated and _binds_data(b, hl.name, p) for b in rule.body
        ):
            raise ClassifyError("asynchronous head location is not bound by a body relation")
        return ASYNC
    if ht.name == t:
        if hl.name != l:
            raise ClassifyError("synchronous head location differs from body location")
        return SYNC
    if any(is_successor(b, ht.name, t) for b in rule.body):
        if hl.name != l:
            raise ClassifyError("sequential head location differs from body location")
        return SEQ
    raise ClassifyError("head time is unrelated to body time")


def _binds_data(a: Atom, v: str, p: Program) -> bool:
    args = a.args[:-2] if p.is_idb(a.rel) else a.args
    if p.is_function(a.rel):
        rel = p.rel(a.rel)
        args = a.args[rel.n_in:]
    return any(isinstance(x, Var) and x.name == v for x in args)


def is_persistence_rule(rule: Rule, p: Program) -> bool:
    """head = the single body relation with identical bindings, plus t'=t+1."""
    atoms = list(rule.atoms())
    if len(atoms) != 1 or len(rule.body) != 2:
        return False
    b = atoms[0]
    if b.negated or b.rel != rule.head.rel or not p.is_idb(b.rel):
        return False
    if rule.head.args[:-1] != b.args[:-1]:
        return False
    ht, bt = rule.head.args[-1], b.args[-1]
    if not (isinstance(ht, Var) and isinstance(bt, Var)):
        return False
    others = [x for x in rule.body if x is not b]
    return is_successor(others[0], ht.name, bt.name)


def persisted_relations(p: Program, rules=None) -> set[str]:
    rules = rules if rules is not None else [r for _, _, r in p.all_rules()]
    return {r.head.rel for r in rules if is_persistence_rule(r, p)}


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    kind: str
    component: str
    rule: int
    message: str

    def __str__(self) -> str:
        return f"{self.component}[{self.rule + 1}] {self.kind}: {self.message}"


def check_well_formed(p: Program) -> list[Violation]:
    """Empty list iff every rule meets the dialect's structural constraints."""
    out: list[Violation] = []
    for r in p.relations:
        if r.kind == "idb" and r.arity < 2:
            out.append(Violation("constraint-1", "", -1, f"IDB relation {r.name} needs location and time"))
    for comp, i, rule in p.all_rules():
        def bad(kind: str, msg: str) -> None:
            out.append(Violation(kind, comp.name, i, msg))

        head_rel = p.rel(rule.head.rel)
        if head_rel is None or head_rel.kind != "idb":
            bad("edb-head", f"{rule.head.rel} is not an IDB relation and cannot be a head")
            continue
        # aggregate placement
        aggs = [a for a in rule.head.args if isinstance(a, Agg)]
        if len(aggs) > 1:
            bad("aggregate", "at most one aggregate per head")
        for a in aggs:
            if a.zero and a.func != "count":
                bad("aggregate", "zero-if-empty applies to count only")
        if aggs and rule.head.args[-2:] and any(isinstance(x, Agg) for x in rule.head.args[-2:]):
            bad("aggregate", "aggregate in location/time position")
        for b in rule.body:
            if isinstance(b, Atom) and any(isinstance(x, Agg) for x in b.args):
                bad("aggregate", f"aggregate term in body literal {b}")
        # constraint 2: shared location/time variables
        st = set()
        for a in idb_atoms(rule, p):
            st.add((str(a.args[-2]), str(a.args[-1])))
            if not isinstance(a.args[-2], Var) or not isinstance(a.args[-1], Var):
                bad("constraint-2", f"{a.rel} location/time must be variables")
        if len(st) > 1:
            bad("constraint-2", f"body literals use distinct location/time variables {sorted(st)}")
            continue
        try:
            kind = classify_rule(rule, p)
        except ClassifyError as e:
            bad("constraint-3", e.msg)
            continue
        for msg in _safety(rule, p):
            bad("safety", msg)
        for msg in _entanglement(rule, p, kind):
            bad("entanglement", msg)
    return out


def _safety(rule: Rule, p: Program) -> list[str]:
    """Every head, comparison and function-input variable must be bound."""
    bound: set[str] = set()
    pending = list(rule.body)
    progress = True
    while progress:
        progress = False
        for b in list(pending):
            if isinstance(b, Atom) and not b.negated:
                rel = p.rel(b.rel)
                if rel is not None and rel.kind == "function":
                    ins = set().union(*[expr_vars(x) for x in b.args[: rel.n_in]]) if rel.n_in else set()
                    if not ins <= bound:
                        continue
                bound |= b.vars()
            elif isinstance(b, Cmp):
                if b.vars() <= bound:
                    pass
                elif b.op == "=" and isinstance(b.left, Var) and expr_vars(b.right) <= bound:
                    bound.add(b.left.name)
                elif b.op == "=" and isinstance(b.right, Var) and expr_vars(b.left) <= bound:
                    bound.add(b.right.name)
                else:
                    continue
            elif isinstance(b, Delay):
                ins = set().union(*[expr_vars(x) for x in b.inputs])
                if not ins <= bound:
                    continue
                bound.add(b.out.name)
            elif isinstance(b, Atom):
                pass  # negation tolerates unbound (existential) variables
            pending.remove(b)
            progress = True
    msgs = [f"cannot bind {b}" for b in pending]
    for v in sorted(rule.head.vars() - bound):
        msgs.append(f"head variable {v} is unbound")
    return msgs


def _entanglement(rule: Rule, p: Program, kind: str) -> list[str]:
    """Time variables may appear only in time positions (plus flagged attributes)."""
    l, t = body_space_time(rule, p)
    times = {t, str(rule.head.args[-1])}
    flagged = set(p.entangled)
    msgs = []

    def check_atom(a: Atom) -> None:
        data = a.args[:-2] if p.is_idb(a.rel) else a.args
        for i, x in enumerate(data):
            names = {x.name} if isinstance(x, Var) else set(x.vars) if isinstance(x, Agg) else set()
            if names & times and (a.rel, i) not in flagged:
                msgs.append(f"time variable in data attribute {i} of {a.rel}")

    check_atom(rule.head)
    for b in rule.body:
        if isinstance(b, Atom):
            check_atom(b)
        elif isinstance(b, Cmp):
            if b.vars() & times and not is_successor(b, str(rule.head.args[-1]), t):
                # comparisons over flagged time-valued data are fine, raw clocks are not
                msgs.append(f"time variable in comparison {b}")
    return msgs
