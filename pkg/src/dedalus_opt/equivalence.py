"""Brute-force equivalence checks between an original and a rewritten program.

Outputs are compared on what a client can observe: the content of each
output message (relation, values, destination) and its arrival time. Input
facts are injected at identical times in both programs.

The exact check enumerates every delay assignment of node-to-node messages.
Client-bound messages of the rewritten program take delay 1; the original's
client-bound delays are left free and solved for per content. An original
run with send times S can produce arrival set T iff each t in T gets a
distinct send strictly before it and every send has some t after it.
Delaying a rewritten output further only moves T later, which keeps a
matching valid, so delay 1 covers every rewritten run.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

from .ast import Program, format_value
from .dialect import pretty_print
from .evaluator import (
    ChoiceSchedule,
    Engine,
    History,
    InputFact,
    SeededSchedule,
    default_outputs,
    enumerate_runs,
    run,
)

DEFAULT_LIMIT = 20000


class LimitExceeded(Exception):
    pass


class NotSettled(Exception):
    pass


class NotConfluent(Exception):
    pass


class ReplayError(Exception):
    pass


def program_hash(p: Program) -> str:
    return hashlib.sha256(pretty_print(p).encode()).hexdigest()[:16]


def content_text(c: tuple) -> str:
    rel, vals, dest = c
    return f"{rel}({','.join(format_value(v, quote=True) for v in vals)})@{dest}"


# ---------------------------------------------------------------- observables


@dataclass(frozen=True)
class ObservableHistory:
    inputs: tuple  # (rel, values, loc, send)
    outputs: tuple  # (rel, values, dest, arrival)
    resends: tuple = ()
    settled_at: int | None = None

    def contents(self) -> frozenset:
        return frozenset((r, v, d) for r, v, d, _ in self.outputs) | frozenset(self.resends)

    def to_dict(self) -> dict:
        return {
            "inputs": [f"{content_text((r, v, l))} sent={s}" for r, v, l, s in self.inputs],
            "outputs": [f"{content_text((r, v, d))} at={a}" for r, v, d, a in self.outputs],
            "resends": [content_text(c) for c in self.resends],
        }


def observable(h: History, inputs: Iterable[str] | None = None, outputs: Iterable[str] | None = None) -> ObservableHistory:
    """Keep input send times and output arrival times of the chosen relations."""
    ins = set(inputs) if inputs is not None else None
    outs = set(outputs) if outputs is not None else None
    i = sorted({(r.rel, r.values, r.loc, r.send) for r in h.inputs() if ins is None or r.rel in ins}, key=_rec_key)
    o = sorted({(r.rel, r.values, r.loc, r.arrival) for r in h.outputs() if outs is None or r.rel in outs}, key=_rec_key)
    rs = tuple(c for c in h.resends if outs is None or c[0] in outs)
    return ObservableHistory(tuple(i), tuple(o), rs, h.quiescent_at)


def _rec_key(x):
    return (x[0], tuple(map(_vk, x[1])), x[2], x[3])


def _vk(v):
    from .ast import value_key

    return value_key(v)


# ---------------------------------------------------------------- signatures


@dataclass(frozen=True)
class SendSignature:
    """Per-content send times of one settled run (original side)."""

    sends: tuple  # ((content, (s1, s2, ...)), ...)
    resends: frozenset
    settled_at: int

    @property
    def contents(self) -> frozenset:
        return frozenset(c for c, _ in self.sends) | self.resends


@dataclass(frozen=True)
class ArrivalSignature:
    arrivals: tuple  # ((content, (t1, t2, ...)), ...)
    resends: frozenset
    settled_at: int

    @property
    def contents(self) -> frozenset:
        return frozenset(c for c, _ in self.arrivals) | self.resends


def _require_settled(h: History, who: str) -> None:
    if h.quiescent_at is None:
        raise NotSettled(f"{who} run did not settle within horizon {h.horizon}; raise the horizon")


def send_signature(h: History, outputs: set[str]) -> SendSignature:
    _require_settled(h, "original")
    by: dict[tuple, set[int]] = {}
    for r in h.outputs():
        if r.rel in outputs:
            by.setdefault((r.rel, r.values, r.loc), set()).add(r.send)
    rs = frozenset(c for c in h.resends if c[0] in outputs)
    return SendSignature(tuple(sorted(((c, tuple(sorted(v))) for c, v in by.items()), key=_ckey)), rs, h.quiescent_at)


def arrival_signature(h: History, outputs: set[str]) -> ArrivalSignature:
    _require_settled(h, "rewritten")
    by: dict[tuple, set[int]] = {}
    for r in h.outputs():
        if r.rel in outputs:
            by.setdefault((r.rel, r.values, r.loc), set()).add(r.arrival)
    rs = frozenset(c for c in h.resends if c[0] in outputs)
    return ArrivalSignature(tuple(sorted(((c, tuple(sorted(v))) for c, v in by.items()), key=_ckey)), rs, h.quiescent_at)


def _ckey(item):
    c = item[0]
    return (c[0], tuple(map(_vk, c[1])), c[2])


def can_produce(sends: list[int], arrivals: list[int], infinite: bool) -> bool:
    """Can sends at `sends` arrive exactly at the set `arrivals`?

    Every arrival needs its own earlier send and every send needs a later
    arrival. With `infinite`, both lists continue one per tick forever past
    their last element, so only the finite prefix needs checking.
    """
    s = sorted(sends)
    ts = sorted(set(arrivals))
    k = 0
    for j, t in enumerate(ts):
        while k < len(s) and s[k] < t:
            k += 1
        if k < j + 1:
            return False
    if infinite:
        return True
    return bool(ts) and bool(s) and s[-1] < ts[-1]


def _extend(times: tuple, settled: int | None, resent: bool, upto: int, offset: int) -> list[int]:
    out = list(times)
    if resent:
        out += list(range(settled + 1 + offset, upto + 1))
    return out


def matches(orig: SendSignature, rew: ArrivalSignature) -> tuple[bool, str | None]:
    """Can the original run, with suitable client-bound delays, show exactly `rew`?"""
    if orig.contents != rew.contents:
        diff = sorted(orig.contents ^ rew.contents, key=lambda c: _ckey((c,)))
        return False, content_text(diff[0])
    if orig.resends != rew.resends:
        diff = sorted(orig.resends ^ rew.resends, key=lambda c: _ckey((c,)))
        return False, content_text(diff[0])
    sends = dict(orig.sends)
    arrs = dict(rew.arrivals)
    horizon = max(orig.settled_at, rew.settled_at) + 3
    for c in sorted(rew.contents, key=lambda c: _ckey((c,))):
        resent = c in rew.resends
        s = _extend(sends.get(c, ()), orig.settled_at, resent, horizon, 0)
        t = _extend(arrs.get(c, ()), rew.settled_at, resent, horizon + 1, 1)
        if resent:
            t = [x for x in t if x <= horizon + 1]
            s = [x for x in s if x <= horizon]
        if not can_produce(s, t, resent):
            return False, content_text(c)
    return True, None


# ---------------------------------------------------------------- verdicts


@dataclass
class EquivalenceVerdict:
    mode: str  # exact-history | eventual-content
    equivalent: bool
    counterexample: dict | None = None
    stats: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.equivalent

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "result": "equivalent" if self.equivalent else "counterexample",
            "counterexample": self.counterexample,
            "stats": self.stats,
        }


def _inputs_list(inputs: Iterable[InputFact]) -> list[InputFact]:
    return sorted(inputs, key=lambda f: (f.time, f.loc, f.rel, tuple(map(_vk, f.values))))


def _inputs_json(inputs: list[InputFact]) -> list:
    return [[f.rel, list(f.values), f.loc, f.time] for f in inputs]


def _inputs_from_json(xs: list) -> list[InputFact]:
    return [InputFact(r, tuple(tuple(v) if isinstance(v, list) else v for v in vals), loc, t) for r, vals, loc, t in xs]


def _outputs(original: Program, rewritten: Program, outputs) -> set[str]:
    if outputs is not None:
        return set(outputs)
    return default_outputs(original)


def check_exact(
    original: Program,
    rewritten: Program,
    inputs: Iterable[InputFact],
    max_delay: int,
    horizon: int,
    original_max_delay: int | None = None,
    outputs: Iterable[str] | None = None,
    limit: int = DEFAULT_LIMIT,
    samples: int = 200,
) -> EquivalenceVerdict:
    """Every rewritten run must be reproducible by some original run.

    Raises LimitExceeded when the original has more than `limit` delay
    assignments. When the rewritten program does, `samples` seeded schedules
    are checked instead and the verdict says so.
    """
    inputs = _inputs_list(inputs)
    outs = _outputs(original, rewritten, outputs)
    od = original_max_delay or max_delay
    eo, er = Engine(original), Engine(rewritten)
    kw = dict(output_relations=outs, sink_delay=1)
    index: dict[tuple, set[SendSignature]] = {}
    n_orig = 0
    for choices, res in enumerate_runs(original, inputs, horizon, od, limit + 1, eo, **kw):
        n_orig += 1
        if n_orig > limit:
            raise LimitExceeded(f"original has more than {limit} schedules; use check_eventual")
        sig = send_signature(res.history, outs)
        index.setdefault((sig.contents, sig.resends), set()).add(sig)
    stats = {
        "original_schedules": n_orig,
        "original_distinct": sum(len(v) for v in index.values()),
        "max_delay": max_delay,
        "original_max_delay": od,
        "horizon": horizon,
    }
    cache: dict[ArrivalSignature, tuple[bool, str | None]] = {}

    def judge(sig: ArrivalSignature) -> tuple[bool, str | None]:
        if sig not in cache:
            cands = index.get((sig.contents, sig.resends), set())
            if not cands:
                # report the content missing against the most common original outcome
                some = max(index, key=lambda k: len(index[k]))
                diff = sorted((some[0] ^ sig.contents) or (some[1] ^ sig.resends), key=lambda c: _ckey((c,)))
                cache[sig] = (False, content_text(diff[0]) if diff else "output content")
            else:
                fact = None
                for o in sorted(cands, key=lambda o: o.sends):
                    ok, fact = matches(o, sig)
                    if ok:
                        cache[sig] = (True, None)
                        break
                else:
                    cache[sig] = (False, f"no original run reproduces the timing of {fact}")
        return cache[sig]

    def fail(desc: dict, why: str, h: History) -> EquivalenceVerdict:
        cx = {
            "original_hash": program_hash(original),
            "rewritten_hash": program_hash(rewritten),
            "inputs": _inputs_json(inputs),
            "horizon": horizon,
            "max_delay": max_delay,
            "outputs": sorted(outs),
            "schedule": desc,
            "differing": why,
            "history": h.serialize(),
        }
        return EquivalenceVerdict("exact-history", False, cx, stats)

    n = 0
    exhaustive = True
    runs = enumerate_runs(rewritten, inputs, horizon, max_delay, limit + 1, er, **kw)
    for choices, res in runs:
        n += 1
        if n > limit:
            exhaustive = False
            break
        ok, why = judge(arrival_signature(res.history, outs))
        if not ok:
            stats.update(rewritten_schedules=n, exhaustive=True)
            return fail({"mode": "exhaustive-enumeration", "choices": list(choices), "max_delay": max_delay}, why, res.history)
    if not exhaustive:
        n = 0
        for seed in range(samples):
            res = run(rewritten, inputs, SeededSchedule(seed, max_delay), horizon, engine=er, **kw)
            n += 1
            ok, why = judge(arrival_signature(res.history, outs))
            if not ok:
                stats.update(rewritten_schedules=n, exhaustive=False)
                return fail({"mode": "seeded-random", "seed": seed, "max_delay": max_delay}, why, res.history)
    stats.update(rewritten_schedules=n, exhaustive=exhaustive)
    stats["confidence"] = "all rewritten schedules" if exhaustive else f"{n} sampled rewritten schedules"
    return EquivalenceVerdict("exact-history", True, None, stats)


def check_eventual(
    original: Program,
    rewritten: Program,
    inputs: Iterable[InputFact],
    schedules: int,
    max_delay: int,
    horizon: int,
    outputs: Iterable[str] | None = None,
) -> EquivalenceVerdict:
    """Output content (timestamps erased) must match the original's unique content on every seed."""
    inputs = _inputs_list(inputs)
    outs = _outputs(original, rewritten, outputs)
    eo, er = Engine(original), Engine(rewritten)
    kw = dict(output_relations=outs)
    expected = None
    for seed in range(schedules):
        h = run(original, inputs, SeededSchedule(seed, max_delay), horizon, engine=eo, **kw).history
        _require_settled(h, "original")
        got = observable(h, outputs=outs).contents()
        if expected is None:
            expected = got
        elif got != expected:
            diff = sorted(got ^ expected, key=lambda c: _ckey((c,)))
            raise NotConfluent(f"original output differs across seeds at {content_text(diff[0])} (seed {seed})")
    expected = expected or frozenset()
    stats = {"schedules": schedules, "max_delay": max_delay, "horizon": horizon, "contents": len(expected)}
    for seed in range(schedules):
        h = run(rewritten, inputs, SeededSchedule(seed, max_delay), horizon, engine=er, **kw).history
        _require_settled(h, "rewritten")
        got = observable(h, outputs=outs).contents()
        if got != expected:
            diff = sorted(got ^ expected, key=lambda c: _ckey((c,)))
            which = "extra" if diff[0] in got else "missing"
            cx = {
                "original_hash": program_hash(original),
                "rewritten_hash": program_hash(rewritten),
                "inputs": _inputs_json(inputs),
                "horizon": horizon,
                "max_delay": max_delay,
                "outputs": sorted(outs),
                "schedule": {"mode": "seeded-random", "seed": seed, "max_delay": max_delay},
                "differing": f"{which} {content_text(diff[0])}",
                "history": h.serialize(),
            }
            stats["failed_at"] = seed
            return EquivalenceVerdict("eventual-content", False, cx, stats)
    stats["confidence"] = f"{schedules} sampled schedules per program"
    return EquivalenceVerdict("eventual-content", True, None, stats)


def replay(counterexample: dict, original: Program, rewritten: Program) -> tuple[History, History]:
    """Re-run the rewritten schedule of a counterexample and the original under the same schedule."""
    if program_hash(original) != counterexample["original_hash"]:
        raise ReplayError("original program does not match the counterexample")
    if program_hash(rewritten) != counterexample["rewritten_hash"]:
        raise ReplayError("rewritten program does not match the counterexample")
    inputs = _inputs_from_json(counterexample["inputs"])
    outs = set(counterexample["outputs"])
    sched = counterexample["schedule"]
    horizon = counterexample["horizon"]
    exact = sched["mode"] == "exhaustive-enumeration"

    def schedule():
        if exact:
            return ChoiceSchedule(sched["choices"], sched["max_delay"])
        return SeededSchedule(sched["seed"], sched["max_delay"])

    kw = dict(output_relations=outs)
    if exact:
        kw["sink_delay"] = 1
    h_rew = run(rewritten, inputs, schedule(), horizon, **kw).history
    h_orig = run(original, inputs, schedule(), horizon, **kw).history
    return h_orig, h_rew


def dumps(v: EquivalenceVerdict) -> str:
    return json.dumps(v.to_dict(), sort_keys=True)
