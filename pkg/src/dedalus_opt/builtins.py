"""Finite evaluation hooks for EDB-function relations and stable hashing."""
from __future__ import annotations

import hashlib

from .ast import Policy, Program, Value, format_value


def canonical_bytes(vals: tuple) -> bytes:
    return ("\x1f".join(format_value(v, quote=True) for v in vals)).encode()


def stable_hash64(vals: tuple) -> int:
    return int.from_bytes(hashlib.blake2b(canonical_bytes(vals), digest_size=8).digest(), "big")


def hash_value(v: Value) -> int:
    return stable_hash64((v,)) % 65536


def sign_value(v: Value) -> str:
    return "sig_" + hashlib.blake2b(canonical_bytes((v,)), digest_size=4).hexdigest()


# name -> (inputs tuple) -> list of output tuples
def _hash(ins):
    return [(hash_value(ins[0]),)]


def _sign(ins):
    return [(sign_value(ins[0]),)]


def _verify(ins):
    return [()] if sign_value(ins[0]) == ins[1] else []


def _route(ins):
    return [tuple(ins)]


def _succ(ins):
    return [(ins[0] + 1,)]


def _add(ins):
    return [(ins[0] + ins[1],)]


def _lt(ins):
    return [()] if ins[0] < ins[1] else []


def _pack(ins):
    return [(tuple(ins),)]


def _unpack(ins):
    return [tuple(ins[0])] if isinstance(ins[0], tuple) else []


def _member(ins):
    return [(x,) for x in ins[0]] if isinstance(ins[0], tuple) else []


BUILTINS = {
    "hash": _hash,
    "sign": _sign,
    "verify": _verify,
    "route": _route,
    "successor": _succ,
    "add": _add,
    "less": _lt,
    "pack": _pack,
    "unpack": _unpack,
    "member": _member,
}

KEY_FUNCS = {"hash": hash_value, "sign": sign_value}


def key_relations(p: Program) -> dict[str, str]:
    """FD tags realised by a unary function relation, e.g. `@fd hash(0 -> 1 : hash)`."""
    out = {}
    for f in p.fds:
        r = p.rel(f.rel)
        if r is not None and r.kind == "function" and r.n_in == 1 and r.arity == 2 and tuple(f.dom) == (0,) and f.rng == 1:
            out.setdefault(f.fn, f.rel)
    return out


def computable_tags(p: Program) -> set[str]:
    return set(KEY_FUNCS) | set(key_relations(p))


def apply_key_fn(fn: tuple[str, ...], vals: tuple, call=None) -> tuple:
    """Apply a composition of unary functions (innermost first) to a key tuple.

    `call(name, value)` evaluates a tag the program defines; builtins otherwise.
    """
    out = tuple(vals)
    for name in fn:
        if len(out) != 1:
            raise ValueError("key functions are unary")
        v = call(name, out[0]) if call is not None else None
        out = (KEY_FUNCS[name](out[0]) if v is None else v,)
    return out


def policy_target(pol: Policy, vals: tuple, orig: str, call=None) -> str:
    key = apply_key_fn(pol.fn, tuple(vals[i] for i in pol.key), call)
    for src, dsts in pol.mapping:
        if src == orig:
            return dsts[stable_hash64(key) % len(dsts)]
    return orig


class FunctionTable:
    """Evaluates function relations; explicit facts override builtins."""

    def __init__(self, p: Program):
        self.p = p
        self.tables: dict[str, dict[tuple, list[tuple]]] = {}
        self.policies = {x.name: x for x in p.policies}
        self.key_rels = key_relations(p)
        for rel, vals in p.facts:
            r = p.rel(rel)
            if r is not None and r.kind == "function":
                self.tables.setdefault(rel, {}).setdefault(vals[: r.n_in], []).append(vals[r.n_in:])

    def call(self, rel: str, ins: tuple) -> list[tuple]:
        r = self.p.rel(rel)
        table = self.tables.get(rel)
        if table is not None and ins in table:
            return table[ins]
        if rel in self.policies:
            return [(policy_target(self.policies[rel], ins[:-1], ins[-1], self.key_value),)]
        if r.builtin is None:
            return []
        if r.builtin == "route" and r.arity - r.n_in != r.n_in:
            return []
        if r.builtin not in BUILTINS:
            raise KeyError(f"unknown builtin {r.builtin!r} for {rel}")
        n_out = r.arity - r.n_in
        return [o for o in BUILTINS[r.builtin](ins) if len(o) == n_out]

    def key_value(self, tag: str, v: Value) -> Value | None:
        rel = self.key_rels.get(tag)
        if rel is None:
            return None
        outs = self.call(rel, (v,))
        return outs[0][0] if outs else None
