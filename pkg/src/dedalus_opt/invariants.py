"""Safety properties of the bundled protocols, checked on finished runs.

Each checker returns a list of violation messages; empty means the run is fine.
"""
from __future__ import annotations

from .evaluator import RunResult


def paxos_safety(res: RunResult) -> list[str]:
    """At most one value per slot, and replica logs are prefixes of one another.

    Reads the `executed(replica, slot, command)` messages replicas send the client.
    """
    logs: dict[str, dict[int, set]] = {}
    for r in res.history.outputs():
        if r.rel == "executed":
            rep, slot, cmd = r.values
            logs.setdefault(rep, {}).setdefault(slot, set()).add(cmd)
    bad = []
    chosen: dict[int, set] = {}
    for rep in sorted(logs):
        for slot, cmds in sorted(logs[rep].items()):
            if len(cmds) > 1:
                bad.append(f"replica {rep} executed {sorted(cmds)} in slot {slot}")
            chosen.setdefault(slot, set()).update(cmds)
    for slot, cmds in sorted(chosen.items()):
        if len(cmds) > 1:
            bad.append(f"slot {slot} holds {sorted(cmds)}")
    seqs = {}
    for rep, lg in logs.items():
        slots = sorted(lg)
        if slots != list(range(len(slots))):
            bad.append(f"replica {rep} has a gap in its log: {slots}")
        seqs[rep] = [min(lg[s]) for s in slots]
    reps = sorted(seqs)
    for i, a in enumerate(reps):
        for b in reps[i + 1 :]:
            x, y = seqs[a], seqs[b]
            n = min(len(x), len(y))
            if x[:n] != y[:n]:
                bad.append(f"logs of {a} and {b} diverge")
    return bad


def twopc_atomicity(res: RunResult, participants: int = 3) -> list[str]:
    """No transaction both commits and aborts; a commit is logged by every participant, an abort by none."""
    committed = {r.values[0] for r in res.history.outputs() if r.rel == "committed"}
    aborted = {r.values[0] for r in res.history.outputs() if r.rel == "aborted"}
    logged: dict[str, set] = {}
    for f in res.instance.relation("commitLogP"):
        logged.setdefault(f.values[0], set()).add(f.loc)
    bad = [f"{tx} both committed and aborted" for tx in sorted(committed & aborted)]
    for tx in sorted(committed):
        if len(logged.get(tx, ())) != participants:
            bad.append(f"{tx} committed but logged by {len(logged.get(tx, ()))} participants")
    for tx in sorted(aborted):
        if logged.get(tx):
            bad.append(f"{tx} aborted but logged as committed")
    return bad


def voting_unanimity(res: RunResult, participants: int = 3) -> list[str]:
    """The client hears about a command iff every participant voted for it."""
    acked = {r.values[0] for r in res.history.outputs() if r.rel == "out"}
    voters: dict[str, set] = {}
    for f in res.instance.relation("vote"):
        src, cmd = f.values
        voters.setdefault(cmd, set()).add(src)
    bad = []
    for cmd in sorted(acked | set(voters)):
        full = len(voters.get(cmd, ())) == participants
        if (cmd in acked) != full:
            bad.append(f"{cmd}: acked={cmd in acked} with {len(voters.get(cmd, ()))} votes")
    return bad


CHECKS = {"paxos": paxos_safety, "twopc": twopc_atomicity, "voting": voting_unanimity}
