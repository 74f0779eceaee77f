"""Rewrite plans: ordered rewrite steps read from JSON and applied in sequence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .ast import Program
from .rewrites import (
    PreconditionError,
    RewriteError,
    RewriteResult,
    SplitPlan,
    decouple_asymmetric,
    decouple_functional,
    decouple_monotonic,
    decouple_mutually_independent,
    decouple_state_machine,
    desugar_seal,
    partial_partition,
    partition_cohash,
    partition_sealed,
    partition_with_dependencies,
)

DECOUPLINGS = (
    "decouple-mutually-independent",
    "decouple-monotonic",
    "decouple-functional",
    "decouple-state-machine",
    "decouple-asymmetric",
)
PARTITIONINGS = ("partition-cohash", "partition-dependencies")
SPLIT_PARTITIONINGS = ("partition-partial", "partition-sealed")
KINDS = DECOUPLINGS + PARTITIONINGS + SPLIT_PARTITIONINGS + ("desugar-seal",)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PlanStep:
    """One rewrite.

    `move` lists 1-based rule numbers of `component`: the rules that go to
    the new component when decoupling, or the partitioned rules of a partial
    partition. `partitions` is the node count per original address; explicit
    `nodes` override the generated names `<addr>_<i>`.
    """

    kind: str
    component: str = ""
    move: tuple[int, ...] = ()
    new_component: str = ""
    new_addrs: tuple[str, ...] = ()
    partitions: int = 0
    nodes: dict[str, tuple[str, ...]] = field(default_factory=dict)
    mode: str = "strict"
    expect: str = "ok"
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}:{self.component}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.label}
        if self.component:
            d["component"] = self.component
        if self.move:
            d["move"] = list(self.move)
        if self.new_component:
            d["new_component"] = self.new_component
            d["new_addrs"] = list(self.new_addrs)
        if self.partitions:
            d["partitions"] = self.partitions
        if self.mode != "strict":
            d["mode"] = self.mode
        d["expect"] = self.expect
        return d


@dataclass(frozen=True)
class Plan:
    program: str
    steps: tuple[PlanStep, ...]


def step_from_dict(d: dict) -> PlanStep:
    kind = d.get("kind")
    if kind not in KINDS:
        raise PlanError(f"unknown rewrite kind {kind!r}")
    if d.get("expect", "ok") not in ("ok", "refused"):
        raise PlanError("expect must be 'ok' or 'refused'")
    if kind != "desugar-seal" and not d.get("component"):
        raise PlanError(f"{kind} needs a component")
    if kind in DECOUPLINGS + SPLIT_PARTITIONINGS and not (d.get("move") and d.get("new_component")):
        raise PlanError(f"{kind} needs move and new_component")
    if kind in PARTITIONINGS + SPLIT_PARTITIONINGS and not (d.get("partitions") or d.get("nodes")):
        raise PlanError(f"{kind} needs partitions or nodes")
    return PlanStep(
        kind=kind,
        component=d.get("component", ""),
        move=tuple(int(x) for x in d.get("move", ())),
        new_component=d.get("new_component", ""),
        new_addrs=tuple(d.get("new_addrs", ())),
        partitions=int(d.get("partitions", 0)),
        nodes={k: tuple(v) for k, v in d.get("nodes", {}).items()},
        mode=d.get("mode", "strict"),
        expect=d.get("expect", "ok"),
        name=d.get("name", ""),
    )


def load_plan(path: str | Path) -> Plan:
    path = Path(path)
    data = json.loads(path.read_text())
    steps = data["steps"] if isinstance(data, dict) else data
    program = data.get("program", "") if isinstance(data, dict) else ""
    if program:
        program = str((path.parent / program).resolve())
    return Plan(program, tuple(step_from_dict(s) for s in steps))


def _split_plan(p: Program, s: PlanStep) -> SplitPlan:
    comp = p.component(s.component)
    n = len(comp.rules)
    bad = [i for i in s.move if not 1 <= i <= n]
    if bad:
        raise PlanError(f"rule {bad[0]} out of range for {s.component} ({n} rules)")
    move = tuple(sorted(i - 1 for i in set(s.move)))
    keep = tuple(i for i in range(n) if i not in move)
    addrs = s.new_addrs or tuple(f"{s.new_component}{i + 1}" for i in range(len(comp.addrs)))
    return SplitPlan(s.component, keep, move, s.new_component, addrs)


def _nodes(p: Program, s: PlanStep) -> dict[str, tuple[str, ...]]:
    if s.nodes:
        return dict(s.nodes)
    return {a: tuple(f"{a}_{i + 1}" for i in range(s.partitions)) for a in p.component(s.component).addrs}


def apply_step(p: Program, s: PlanStep) -> RewriteResult:
    if s.kind == "desugar-seal":
        return RewriteResult(desugar_seal(p))
    if s.component not in {c.name for c in p.components}:
        raise PlanError(f"no component named {s.component}")
    k = s.kind
    if k in PARTITIONINGS:
        fn = partition_cohash if k == "partition-cohash" else partition_with_dependencies
        return fn(p, s.component, _nodes(p, s))
    plan = _split_plan(p, s)
    if k == "partition-partial":
        return partial_partition(p, plan, _nodes(p, s))
    if k == "partition-sealed":
        return partition_sealed(p, plan, _nodes(p, s))
    table: dict[str, Callable] = {
        "decouple-mutually-independent": lambda: decouple_mutually_independent(p, plan),
        "decouple-monotonic": lambda: decouple_monotonic(p, plan, s.mode),
        "decouple-functional": lambda: decouple_functional(p, plan),
        "decouple-state-machine": lambda: decouple_state_machine(p, plan),
        "decouple-asymmetric": lambda: decouple_asymmetric(p, plan, s.mode),
    }
    return table[k]()


@dataclass
class StepOutcome:
    step: PlanStep
    program: Program
    result: RewriteResult | None = None
    error: RewriteError | None = None

    @property
    def applied(self) -> bool:
        return self.result is not None

    @property
    def as_expected(self) -> bool:
        return self.applied == (self.step.expect == "ok")


def apply_plan(p: Program, steps) -> list[StepOutcome]:
    """Apply steps in order. A refused step leaves the program unchanged and the plan continues."""
    out = []
    for s in steps:
        try:
            res = apply_step(p, s)
        except PreconditionError as e:
            out.append(StepOutcome(s, p, None, e))
            continue
        p = res.program
        out.append(StepOutcome(s, p, res))
    return out
