"""Command-line driver: check, analyze, rewrite, simulate, verify.

Machine reports go to stdout as JSON lines; human text goes to stderr.
Exit codes: 0 ok, 1 property violation, 2 usage or IO error.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from .analysis import (
    find_distribution_policy,
    infer_dependencies,
    is_functional,
    is_monotonic,
    is_mutually_independent,
    is_state_machine,
    signature,
)
from .corpus import RunFixture, load_config
from .dialect import check_well_formed, classify_rule, pretty_print
from .equivalence import LimitExceeded, NotConfluent, NotSettled, check_eventual, check_exact
from .evaluator import EvalError, SeededSchedule, run
from .invariants import CHECKS
from .parser import DialectError, parse_program
from .plan import PlanError, apply_plan, load_plan
from .rewrites import desugar_seal

OK, VIOLATION, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def read_program(path: str):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror or e}") from None
    return parse_program(text)


def _config(args) -> RunFixture:
    if args.config:
        try:
            cfg = load_config(args.config)
        except OSError as e:
            raise UsageError(f"cannot read {args.config}: {e.strerror or e}") from None
        except (ValueError, KeyError, TypeError) as e:
            raise UsageError(f"bad run config {args.config}: {e}") from None
    else:
        cfg = RunFixture(program="", inputs=[])
    for k in ("seed", "max_delay", "horizon", "schedules"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def _program_path(args, cfg: RunFixture) -> str:
    path = getattr(args, "program", None) or cfg.program
    if not path:
        raise UsageError("no program given and the run config names none")
    return path


# ---------------------------------------------------------------- check


def cmd_check(args) -> int:
    try:
        p = read_program(args.program)
    except DialectError as e:
        emit({"command": "check", "ok": False, "error": str(e)})
        say(f"parse error: {e}")
        return VIOLATION
    vs = check_well_formed(p)
    for v in vs:
        emit({"command": "check", "violation": v.kind, "component": v.component, "rule": v.rule + 1, "message": v.message})
        say(str(v))
    kinds = {}
    if not vs:
        for comp, i, r in p.all_rules():
            kinds.setdefault(comp.name, []).append(classify_rule(r, p))
    emit({"command": "check", "ok": not vs, "violations": len(vs), "rules": kinds})
    say(f"{args.program}: {'ok' if not vs else f'{len(vs)} violation(s)'}")
    return OK if not vs else VIOLATION


# ---------------------------------------------------------------- analyze


def _rule_numbers(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+)\s*)?", part)
        if not m:
            raise UsageError(f"bad rule selector {text!r}")
        lo = int(m.group(1))
        hi = int(m.group(2) or lo)
        out += range(lo, hi + 1)
    return out


def cmd_analyze(args) -> int:
    p = read_program(args.program)
    vs = check_well_formed(p)
    if vs:
        for v in vs:
            say(str(v))
        emit({"command": "analyze", "ok": False, "violations": [str(v) for v in vs]})
        return VIOLATION
    deps = infer_dependencies(p)
    names = [c.name for c in p.components]
    if args.component:
        if args.component not in names:
            raise UsageError(f"no component named {args.component}")
        names = [args.component]
    emit({"command": "analyze", "dependencies": deps.to_dict()})
    for name in names:
        c = p.component(name)
        rep = {
            "command": "analyze",
            "component": name,
            "signature": signature(c, p).to_dict(),
            "monotonic": is_monotonic(c, p).to_dict(),
            "functional": is_functional(c, p).to_dict(),
            "state_machine": is_state_machine(c, p).to_dict(),
            "policy_cohash": find_distribution_policy(c, p, deps, c.addrs, "cohash").to_dict(),
            "policy_cd": find_distribution_policy(c, p, deps, c.addrs, "cd").to_dict(),
        }
        if args.split:
            if len(names) != 1:
                raise UsageError("--split needs --component")
            sel = _rule_numbers(args.split)
            n = len(c.rules)
            if any(not 1 <= i <= n for i in sel):
                raise UsageError(f"--split selects rules outside 1..{n}")
            c2 = [c.rules[i - 1] for i in sorted(set(sel))]
            c1 = [r for i, r in enumerate(c.rules) if i + 1 not in sel]
            rep["split"] = {"rules": sorted(set(sel)), "mutually_independent": is_mutually_independent(c1, c2, p).to_dict()}
        emit(rep)
        flags = [k for k in ("monotonic", "functional", "state_machine") if rep[k]["ok"]]
        say(f"{name}: refs={rep['signature']['referenced']} {' '.join(flags) or 'no decoupling verdicts'}")
    return OK


# ---------------------------------------------------------------- rewrite


def _slug(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", s).strip("-").lower() or "step"


def cmd_rewrite(args) -> int:
    if not args.plan:
        raise UsageError("rewrite needs --plan")
    try:
        plan = load_plan(args.plan)
    except OSError as e:
        raise UsageError(f"cannot read {args.plan}: {e.strerror or e}") from None
    except (ValueError, KeyError, PlanError) as e:
        raise UsageError(f"bad plan {args.plan}: {e}") from None
    path = args.program or plan.program
    if not path:
        raise UsageError("no program given and the plan names none")
    p = read_program(path)
    out = Path(args.out_dir) if args.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "00-original.dl").write_text(pretty_print(p))
    bad = 0
    try:
        outcomes = apply_plan(p, plan.steps)
    except PlanError as e:
        raise UsageError(str(e)) from None
    for i, o in enumerate(outcomes, 1):
        rec = {"command": "rewrite", "step": i, "name": o.step.label, "kind": o.step.kind, "expect": o.step.expect}
        if o.applied:
            rec["result"] = "applied"
            rec["evidence"] = o.result.evidence
            if out:
                f = out / f"{i:02d}-{_slug(o.step.label)}.dl"
                f.write_text(pretty_print(o.program))
                rec["snapshot"] = str(f)
        else:
            rec["result"] = "refused"
            rec["reason"] = str(o.error)
        rec["as_expected"] = o.as_expected
        bad += not o.as_expected
        emit(rec)
        say(f"step {i} {o.step.label}: {rec['result']}{'' if o.as_expected else ' (unexpected)'}")
    emit({"command": "rewrite", "ok": bad == 0, "steps": len(outcomes), "unexpected": bad})
    return OK if bad == 0 else VIOLATION


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = _config(args)
    p = desugar_seal(read_program(_program_path(args, cfg)))
    res = run(p, cfg.inputs, SeededSchedule(cfg.seed, cfg.max_delay), cfg.horizon, output_relations=cfg.outputs)
    h = res.history
    text = h.serialize()
    rec = {
        "command": "simulate",
        "seed": cfg.seed,
        "max_delay": cfg.max_delay,
        "horizon": cfg.horizon,
        "truncated": h.truncated,
        "quiescent_at": h.quiescent_at,
        "outputs": len(h.outputs()),
    }
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        f = out / f"history-seed{cfg.seed}.txt"
        f.write_text(text)
        rec["history"] = str(f)
    else:
        sys.stderr.write(text)
    status = OK
    if cfg.invariant:
        bad = CHECKS[cfg.invariant](res)
        rec["invariant"] = cfg.invariant
        rec["violations"] = bad
        status = VIOLATION if bad else OK
    emit(rec)
    if h.truncated:
        say("run truncated at the horizon")
    return status


# ---------------------------------------------------------------- verify


def _verify_pair(orig, rew, cfg: RunFixture, exact: bool, original_max_delay, label: str) -> dict:
    if exact:
        v = check_exact(orig, rew, cfg.inputs, cfg.max_delay, cfg.horizon, original_max_delay, cfg.outputs)
    else:
        v = check_eventual(orig, rew, cfg.inputs, cfg.schedules, cfg.max_delay, cfg.horizon, cfg.outputs)
    rec = {"command": "verify", "target": label, **v.to_dict()}
    if cfg.invariant:
        viol = []
        for prog in (orig, rew):
            for seed in range(cfg.schedules):
                res = run(prog, cfg.inputs, SeededSchedule(seed, cfg.max_delay), cfg.horizon, output_relations=cfg.outputs)
                viol += [f"seed {seed}: {m}" for m in CHECKS[cfg.invariant](res)]
        rec["invariant"] = cfg.invariant
        rec["invariant_violations"] = viol
    return rec


def cmd_verify(args) -> int:
    cfg = _config(args)
    orig_src = read_program(_program_path(args, cfg))
    orig = desugar_seal(orig_src)
    targets = []
    if args.plan:
        try:
            plan = load_plan(args.plan)
        except OSError as e:
            raise UsageError(f"cannot read {args.plan}: {e.strerror or e}") from None
        except (ValueError, KeyError, PlanError) as e:
            raise UsageError(f"bad plan {args.plan}: {e}") from None
        for i, o in enumerate(apply_plan(orig_src, plan.steps), 1):
            if o.applied:
                targets.append((f"step {i}: {o.step.label}", desugar_seal(o.program)))
    elif args.rewritten:
        targets.append((args.rewritten, desugar_seal(read_program(args.rewritten))))
    else:
        targets.append(("identity", orig))
    failed = 0
    out = Path(args.out_dir) if args.out_dir else None
    for label, rew in targets:
        try:
            rec = _verify_pair(orig, rew, cfg, args.exact, args.original_max_delay, label)
        except (NotSettled, NotConfluent, LimitExceeded) as e:
            rec = {"command": "verify", "target": label, "result": "inconclusive", "reason": f"{type(e).__name__}: {e}"}
        bad = rec.get("result") != "equivalent" or bool(rec.get("invariant_violations"))
        failed += bad
        if bad and out and rec.get("counterexample"):
            out.mkdir(parents=True, exist_ok=True)
            f = out / f"counterexample-{_slug(label)}.json"
            f.write_text(json.dumps(rec["counterexample"], sort_keys=True, indent=1))
            rec["bundle"] = str(f)
        if rec.get("counterexample"):
            rec["counterexample"] = {k: v for k, v in rec["counterexample"].items() if k != "history"}
        emit(rec)
        say(f"{label}: {rec['result']}" + (f" ({len(rec['invariant_violations'])} invariant violations)" if rec.get("invariant_violations") else ""))
    emit({"command": "verify", "ok": failed == 0, "targets": len(targets), "failed": failed})
    return OK if failed == 0 else VIOLATION


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dedalus-opt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def run_flags(sp, schedules=False):
        sp.add_argument("--config", help="run configuration (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--max-delay", dest="max_delay", type=int)
        sp.add_argument("--horizon", type=int)
        if schedules:
            sp.add_argument("--schedules", type=int)
        sp.add_argument("--out-dir", dest="out_dir")

    sp = sub.add_parser("check", help="parse and check well-formedness")
    sp.add_argument("program")
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("analyze", help="signatures, decoupling verdicts, dependencies and policies")
    sp.add_argument("program")
    sp.add_argument("--component")
    sp.add_argument("--split", help="rule numbers (e.g. 3-8) to test for mutual independence against the rest")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("rewrite", help="apply a rewrite plan, writing a .dl snapshot per step")
    sp.add_argument("program", nargs="?")
    sp.add_argument("--plan")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.set_defaults(fn=cmd_rewrite)

    sp = sub.add_parser("simulate", help="run one seeded schedule and write its History")
    sp.add_argument("program", nargs="?")
    run_flags(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("verify", help="check a rewritten program (or every plan step) against the original")
    sp.add_argument("program", nargs="?")
    sp.add_argument("rewritten", nargs="?")
    sp.add_argument("--plan")
    sp.add_argument("--exact", action="store_true", help="enumerate every schedule instead of sampling")
    sp.add_argument("--original-max-delay", dest="original_max_delay", type=int)
    run_flags(sp, schedules=True)
    sp.set_defaults(fn=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return USAGE if e.code else OK
    try:
        return args.fn(args)
    except UsageError as e:
        say(f"error: {e}")
        emit({"command": args.cmd, "ok": False, "error": str(e)})
        return USAGE
    except DialectError as e:
        say(f"parse error: {e}")
        emit({"command": args.cmd, "ok": False, "error": str(e)})
        return VIOLATION
    except EvalError as e:
        say(f"evaluation error: {e}")
        emit({"command": args.cmd, "ok": False, "error": str(e)})
        return VIOLATION


if __name__ == "__main__":
    sys.exit(main())
