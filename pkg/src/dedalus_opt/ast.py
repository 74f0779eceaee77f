"""Immutable syntax tree for the spatiotemporal Datalog dialect."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Union

Value = Union[int, str, tuple]

AGG_FUNCS = ("count", "max", "min", "sum", "cert", "seal")
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: Value

    def __str__(self) -> str:
        return format_value(self.value, quote=True)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def __str__(self) -> str:
        return f"{self.left}{self.op}{self.right}"


@dataclass(frozen=True)
class Agg:
    """Aggregate term. `zero` makes an empty group produce 0 (count only)."""

    func: str
    vars: tuple[str, ...]
    zero: bool = False

    def __str__(self) -> str:
        name = self.func + ("0" if self.zero else "")
        return f"{name}<{','.join(self.vars)}>"


Term = Union[Var, Const, Agg]
Expr = Union[Var, Const, BinOp]


@dataclass(frozen=True)
class Atom:
    rel: str
    args: tuple[Term, ...]
    negated: bool = False

    def __str__(self) -> str:
        inner = ",".join(str(a) for a in self.args)
        return ("!" if self.negated else "") + f"{self.rel}({inner})"

    def vars(self) -> set[str]:
        out: set[str] = set()
        for a in self.args:
            if isinstance(a, Var):
                out.add(a.name)
            elif isinstance(a, Agg):
                out.update(a.vars)
        return out


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Expr
    right: Expr

    def __str__(self) -> str:
        return f"{self.left}{self.op}{self.right}"

    def vars(self) -> set[str]:
        return expr_vars(self.left) | expr_vars(self.right)


@dataclass(frozen=True)
class Delay:
    """The builtin delay literal: `delay((inputs...), out)`."""

    inputs: tuple[Expr, ...]
    out: Var

    def __str__(self) -> str:
        if len(self.inputs) == 1:
            return f"delay({self.inputs[0]},{self.out})"
        return f"delay(({','.join(str(i) for i in self.inputs)}),{self.out})"

    def vars(self) -> set[str]:
        out = {self.out.name}
        for i in self.inputs:
            out |= expr_vars(i)
        return out


Literal = Union[Atom, Cmp, Delay]


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Literal, ...]
    label: str | None = None

    def __str__(self) -> str:
        prefix = f"{self.label}: " if self.label else ""
        return f"{prefix}{self.head} :- {', '.join(str(b) for b in self.body)}."

    def atoms(self) -> Iterator[Atom]:
        for b in self.body:
            if isinstance(b, Atom):
                yield b

    def aggregate(self) -> Agg | None:
        for a in self.head.args:
            if isinstance(a, Agg):
                return a
        return None


@dataclass(frozen=True)
class Relation:
    """kind is one of 'idb', 'edb', 'function'. Functions map n_in inputs to the rest."""

    name: str
    arity: int
    kind: str
    n_in: int = 0
    builtin: str | None = None


@dataclass(frozen=True)
class FDAnnotation:
    rel: str
    dom: tuple[int, ...]
    rng: int
    fn: str


@dataclass(frozen=True)
class GCAnnotation:
    """Persisted facts of `rel` are dropped once guard(f[attrs]..., l, t) holds."""

    rel: str
    attrs: tuple[int, ...]
    guard: str


@dataclass(frozen=True)
class Policy:
    """Distribution policy materialized as a function relation `name`.

    The function takes the ordinary attributes of `rel` plus the original
    destination and yields the partition address.
    """

    name: str
    rel: str
    key: tuple[int, ...]
    fn: tuple[str, ...]
    mapping: tuple[tuple[str, tuple[str, ...]], ...]


@dataclass(frozen=True)
class Component:
    name: str
    addrs: tuple[str, ...]
    rules: tuple[Rule, ...]

    @property
    def addr(self) -> str:
        return self.addrs[0]


@dataclass(frozen=True)
class Program:
    relations: tuple[Relation, ...] = ()
    components: tuple[Component, ...] = ()
    facts: tuple[tuple[str, tuple[Value, ...]], ...] = ()
    fds: tuple[FDAnnotation, ...] = ()
    gcs: tuple[GCAnnotation, ...] = ()
    entangled: tuple[tuple[str, int], ...] = ()
    client: tuple[str, ...] = ()
    policies: tuple[Policy, ...] = ()

    @cached_property
    def rel_map(self) -> dict[str, Relation]:
        return {r.name: r for r in self.relations}

    def rel(self, name: str) -> Relation | None:
        return self.rel_map.get(name)

    def is_idb(self, name: str) -> bool:
        r = self.rel_map.get(name)
        return r is not None and r.kind == "idb"

    def is_function(self, name: str) -> bool:
        r = self.rel_map.get(name)
        return r is not None and r.kind == "function"

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(f"no component named {name!r}")

    def all_rules(self) -> Iterator[tuple[Component, int, Rule]]:
        for c in self.components:
            for i, r in enumerate(c.rules):
                yield c, i, r

    @cached_property
    def head_relations(self) -> frozenset[str]:
        return frozenset(r.head.rel for _, _, r in self.all_rules())

    def facts_of(self, rel: str) -> list[tuple[Value, ...]]:
        return [v for r, v in self.facts if r == rel]

    def with_components(self, comps: Iterable[Component]) -> "Program":
        return normalize(replace(self, components=tuple(comps)))


def expr_vars(e) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, BinOp):
        return expr_vars(e.left) | expr_vars(e.right)
    return set()


def literal_vars(lit: Literal) -> set[str]:
    return lit.vars()


def rule_vars(rule: Rule) -> set[str]:
    out = rule.head.vars()
    for b in rule.body:
        out |= b.vars()
    return out


def value_key(v: Value):
    """Total order over mixed values."""
    if isinstance(v, bool):
        return (0, int(v))
    if isinstance(v, int):
        return (0, v)
    if isinstance(v, str):
        return (1, v)
    return (2, tuple(value_key(x) for x in v))


def _bare_ok(s: str) -> bool:
    import re

    return re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", s) is not None


def format_value(v: Value, quote: bool = False) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        if not quote and _bare_ok(v):
            return v
        esc = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{esc}"'
    return "[" + ",".join(format_value(x, quote=True) for x in v) + "]"


def normalize(p: Program) -> Program:
    """Canonical ordering of the unordered program parts."""
    return replace(
        p,
        relations=tuple(sorted(set(p.relations), key=lambda r: r.name)),
        facts=tuple(sorted(set(p.facts), key=lambda f: (f[0], tuple(value_key(x) for x in f[1])))),
        fds=tuple(sorted(set(p.fds), key=lambda f: (f.rel, f.dom, f.rng, f.fn))),
        gcs=tuple(sorted(set(p.gcs), key=lambda g: (g.rel, g.attrs, g.guard))),
        entangled=tuple(sorted(set(p.entangled))),
        client=tuple(sorted(set(p.client))),
        policies=tuple(sorted(set(p.policies), key=lambda x: x.name)),
    )


def fresh_name(base: str, taken: Iterable[str], suffix: str) -> str:
    taken = set(taken)
    name = f"{base}{suffix}"
    k = 2
    while name in taken:
        name = f"{base}{suffix}{k}"
        k += 1
    return name
