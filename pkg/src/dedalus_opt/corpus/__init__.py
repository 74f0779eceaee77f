"""Bundled programs, rewrite plans and run configurations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..ast import Program
from ..evaluator import InputFact
from ..parser import parse_program
from ..plan import Plan, apply_step, load_plan, step_from_dict
from ..rewrites import RewriteResult, desugar_seal

ROOT = Path(__file__).resolve().parent
PROTOCOLS = ("kvs", "voting", "twopc", "paxos")


def path(name: str) -> Path:
    return ROOT / name


def load_program(name: str | Path) -> Program:
    p = Path(name)
    if not p.is_absolute():
        p = ROOT / p
    return parse_program(p.read_text())


def inputs_from_json(xs) -> list[InputFact]:
    out = []
    for rel, vals, loc, t in xs:
        out.append(InputFact(rel, tuple(tuple(v) if isinstance(v, list) else v for v in vals), loc, int(t)))
    return out


@dataclass
class RunFixture:
    """Inputs and schedule parameters for simulating or checking one program."""

    program: str
    inputs: list[InputFact]
    horizon: int = 100
    max_delay: int = 1
    schedules: int = 1
    seed: int = 0
    outputs: tuple[str, ...] | None = None
    invariant: str | None = None

    def to_dict(self) -> dict:
        return {
            "program": self.program,
            "inputs": [[f.rel, list(f.values), f.loc, f.time] for f in self.inputs],
            "horizon": self.horizon,
            "max_delay": self.max_delay,
            "schedules": self.schedules,
            "seed": self.seed,
            "outputs": list(self.outputs) if self.outputs is not None else None,
            "invariant": self.invariant,
        }


def load_config(p: str | Path) -> RunFixture:
    p = Path(p)
    d = json.loads(p.read_text())
    prog = d.get("program", "")
    if prog:
        prog = str((p.parent / prog).resolve())
    outs = d.get("outputs")
    return RunFixture(
        program=prog,
        inputs=inputs_from_json(d.get("inputs", [])),
        horizon=int(d.get("horizon", 100)),
        max_delay=int(d.get("max_delay", 1)),
        schedules=int(d.get("schedules", 1)),
        seed=int(d.get("seed", 0)),
        outputs=tuple(outs) if outs is not None else None,
        invariant=d.get("invariant"),
    )


@dataclass
class CorpusEntry:
    name: str
    program: Program
    config: RunFixture
    plan: Plan

    @property
    def expected(self) -> dict[str, str]:
        """Expected gating verdict per plan step: "ok" or "refused"."""
        return {s.label: s.expect for s in self.plan.steps}


def entry(name: str) -> CorpusEntry:
    plan = load_plan(ROOT / "plans" / f"{name}.plan.json")
    cfg = load_config(ROOT / "configs" / f"{name}.run.json")
    return CorpusEntry(name, load_program(plan.program), cfg, plan)


@dataclass
class ExactFixture:
    """One rewrite kind checked by exhaustive schedule enumeration.

    `prefix` steps produce the original; `step` is the rewrite under test.
    """

    kind: str
    program: str
    step: dict
    inputs: list[InputFact]
    max_delay: int
    horizon: int
    original_max_delay: int | None = None
    prefix: list[dict] = field(default_factory=list)

    def build(self) -> tuple[Program, Program]:
        """(original, rewritten), both with seals desugared."""
        p = load_program(self.program)
        for d in self.prefix:
            p = apply_step(p, step_from_dict(d)).program
        r = apply_step(p, step_from_dict(self.step)).program
        return desugar_seal(p), desugar_seal(r)


def exact_fixtures() -> list[ExactFixture]:
    data = json.loads((ROOT / "exact.json").read_text())
    return [
        ExactFixture(
            d["kind"],
            d["program"],
            d["step"],
            inputs_from_json(d["inputs"]),
            d["max_delay"],
            d["horizon"],
            d.get("original_max_delay"),
            d.get("prefix", []),
        )
        for d in data
    ]


@dataclass
class Mutant:
    """A plan step whose precondition fails on `program`."""

    kind: str
    program: str
    step: dict
    why: str

    def apply(self) -> RewriteResult:
        """Raises PreconditionError when the gate catches the mutant."""
        return apply_step(load_program(self.program), step_from_dict(self.step))


def mutants() -> list[Mutant]:
    data = json.loads((ROOT / "mutants.json").read_text())
    return [Mutant(d["kind"], d["program"], d["step"], d["why"]) for d in data]
