"""Tokenizer and recursive-descent parser for `.dl` sources and `.facts` files."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import (
    AGG_FUNCS,
    Agg,
    Atom,
    BinOp,
    Cmp,
    Component,
    Const,
    Delay,
    FDAnnotation,
    GCAnnotation,
    Policy,
    Program,
    Relation,
    Rule,
    Value,
    Var,
    normalize,
)


class DialectError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.msg = msg
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<sym>:-|!=|<=|>=|->|[()\[\],.<>=!+\-@{}:;*|/])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    pos, line, lstart = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DialectError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        s = m.group()
        if kind not in ("ws", "comment"):
            toks.append(Tok(kind, s, line, pos - lstart + 1))
        nl = s.count("\n")
        if nl:
            line += nl
            lstart = pos + s.rindex("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - lstart + 1))
    return toks


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.decls: dict[str, Relation] = {}
        self.uses: list[tuple[str, int, Tok, bool]] = []  # rel, arity, tok, is_head

    # token helpers
    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t.kind in ("sym", "ident") and t.text == text

    def expect(self, text: str) -> Tok:
        t = self.next()
        if t.text != text or t.kind not in ("sym", "ident"):
            raise DialectError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def ident(self) -> Tok:
        t = self.next()
        if t.kind != "ident":
            raise DialectError(f"expected identifier, found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def integer(self) -> int:
        t = self.next()
        if t.kind != "int":
            raise DialectError(f"expected integer, found {t.text!r}", t.line, t.col)
        return int(t.text)

    # grammar
    def program(self) -> Program:
        comps: list[Component] = []
        facts: list[tuple[str, tuple[Value, ...]]] = []
        fds, gcs, ent, client, pols = [], [], [], [], []
        while self.peek().kind != "eof":
            if self.at("@"):
                self.directive(fds, gcs, ent, client, pols)
            elif self.at("component") and self.peek(1).kind == "ident":
                comps.append(self.component())
            else:
                facts.append(self.fact())
        return self.finish(comps, facts, fds, gcs, ent, client, pols)

    def declare(self, rel: Relation, tok: Tok) -> None:
        old = self.decls.get(rel.name)
        if old is not None and old != rel:
            raise DialectError(f"conflicting declaration of {rel.name}", tok.line, tok.col)
        self.decls[rel.name] = rel

    def directive(self, fds, gcs, ent, client, pols) -> None:
        self.expect("@")
        kw = self.ident()
        k = kw.text
        if k in ("edb", "idb", "input"):
            name = self.ident()
            arity = self._slash_int()
            kind = "edb" if k == "edb" else "idb"
            self.declare(Relation(name.text, arity, kind), name)
        elif k == "function":
            name = self.ident()
            arity = self._slash_int()
            self.expect("in")
            n_in = self.integer()
            builtin = None
            if self.at(":"):
                self.next()
                builtin = self.ident().text
            if not 0 <= n_in <= arity:
                raise DialectError("function input count out of range", name.line, name.col)
            self.declare(Relation(name.text, arity, "function", n_in, builtin), name)
        elif k == "fd":
            name = self.ident()
            self.expect("(")
            dom = [self.integer()]
            while self.at(","):
                self.next()
                dom.append(self.integer())
            self.expect("->")
            rng = self.integer()
            self.expect(":")
            fn = self.ident().text
            self.expect(")")
            fds.append(FDAnnotation(name.text, tuple(dom), rng, fn))
        elif k == "gc":
            name = self.ident()
            self.expect("(")
            attrs = []
            if not self.at(")"):
                attrs.append(self.integer())
                while self.at(","):
                    self.next()
                    attrs.append(self.integer())
            self.expect(")")
            self.expect(":")
            guard = self.ident().text
            gcs.append(GCAnnotation(name.text, tuple(attrs), guard))
        elif k == "entangled":
            name = self.ident()
            self.expect("(")
            idx = self.integer()
            self.expect(")")
            ent.append((name.text, idx))
        elif k == "client":
            client.append(self.ident().text)
            while self.at(","):
                self.next()
                client.append(self.ident().text)
        elif k == "policy":
            pols.append(self.policy())
        else:
            raise DialectError(f"unknown directive @{k}", kw.line, kw.col)
        self.expect(".")

    def _slash_int(self) -> int:
        self.expect("/")
        return self.integer()

    def policy(self) -> Policy:
        name = self.ident()
        self.expect("on")
        rel = self.ident().text
        self.expect("key")
        key = [self.integer()]
        while self.at(","):
            self.next()
            key.append(self.integer())
        self.expect("fn")
        fn = [self.ident().text]
        while self.at("*"):
            self.next()
            fn.append(self.ident().text)
        fns = tuple(f for f in fn if f != "id")
        self.expect("map")
        mapping = []
        while True:
            src = self.addr()
            self.expect("->")
            dsts = [self.addr()]
            while self.peek().kind in ("ident", "string"):
                dsts.append(self.addr())
            mapping.append((src, tuple(dsts)))
            if self.at(";"):
                self.next()
                continue
            break
        return Policy(name.text, rel, tuple(key), fns, tuple(mapping))

    def addr(self) -> str:
        t = self.next()
        if t.kind == "ident":
            return t.text
        if t.kind == "string":
            return _unquote(t.text)
        raise DialectError(f"expected address, found {t.text!r}", t.line, t.col)

    def component(self) -> Component:
        self.expect("component")
        name = self.ident()
        self.expect("@")
        addrs = [self.addr()]
        while self.at(","):
            self.next()
            addrs.append(self.addr())
        self.expect("{")
        rules = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                t = self.peek()
                raise DialectError("unterminated component block", t.line, t.col)
            rules.append(self.rule())
        self.expect("}")
        return Component(name.text, tuple(addrs), tuple(rules))

    def rule(self) -> Rule:
        label = None
        if self.peek().kind == "ident" and self.at(":", 1):
            label = self.next().text
            self.next()
        head = self.atom(is_head=True)
        self.expect(":-")
        body = [self.literal()]
        while self.at(","):
            self.next()
            body.append(self.literal())
        self.expect(".")
        return Rule(head, tuple(body), label)

    def literal(self):
        if self.at("!") and self.peek(1).kind == "ident" and self.at("(", 2):
            self.next()
            a = self.atom()
            return Atom(a.rel, a.args, True)
        if self.at("delay") and self.at("(", 1):
            return self.delay()
        if self.peek().kind == "ident" and self.at("(", 1):
            return self.atom()
        left = self.expr()
        t = self.next()
        if t.text not in ("=", "!=", "<", "<=", ">", ">="):
            raise DialectError(f"expected comparison operator, found {t.text!r}", t.line, t.col)
        right = self.expr()
        return Cmp(t.text, left, right)

    def delay(self) -> Delay:
        self.expect("delay")
        self.expect("(")
        if self.at("("):
            self.next()
            ins = [self.expr()]
            while self.at(","):
                self.next()
                ins.append(self.expr())
            self.expect(")")
        else:
            ins = [self.expr()]
        self.expect(",")
        out = self.ident()
        self.expect(")")
        return Delay(tuple(ins), Var(out.text))

    def expr(self):
        e = self.term()
        while self.at("+") or self.at("-"):
            op = self.next().text
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        t = self.next()
        if t.kind == "ident":
            return Var(t.text)
        if t.kind == "int":
            return Const(int(t.text))
        if t.kind == "string":
            return Const(_unquote(t.text))
        if t.text == "-" and self.peek().kind == "int":
            return Const(-int(self.next().text))
        raise DialectError(f"expected term, found {t.text or 'end of input'!r}", t.line, t.col)

    def atom(self, is_head: bool = False) -> Atom:
        name = self.ident()
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.arg())
            while self.at(","):
                self.next()
                args.append(self.arg())
        self.expect(")")
        # a sealed group stands for one attribute per sealed variable
        width = sum(len(a.vars) if isinstance(a, Agg) and a.func == "seal" else 1 for a in args)
        self.uses.append((name.text, width, name, is_head))
        return Atom(name.text, tuple(args))

    def arg(self):
        t = self.peek()
        if t.kind == "ident" and self.at("<", 1):
            base, zero = t.text, False
            if base.endswith("0") and base[:-1] in AGG_FUNCS:
                base, zero = base[:-1], True
            if base in AGG_FUNCS:
                self.next()
                self.next()
                vs = [self.ident().text]
                while self.at(","):
                    self.next()
                    vs.append(self.ident().text)
                self.expect(">")
                return Agg(base, tuple(vs), zero)
        return self.term()

    def fact(self) -> tuple[str, tuple[Value, ...]]:
        name = self.ident()
        self.expect("(")
        vals: list[Value] = []
        if not self.at(")"):
            vals.append(self.fact_value())
            while self.at(","):
                self.next()
                vals.append(self.fact_value())
        self.expect(")")
        if self.at("."):
            self.next()
        self.uses.append((name.text, len(vals), name, False))
        return name.text, tuple(vals)

    def fact_value(self) -> Value:
        t = self.next()
        if t.kind == "int":
            return int(t.text)
        if t.text == "-" and self.peek().kind == "int":
            return -int(self.next().text)
        if t.kind == "ident":
            return t.text
        if t.kind == "string":
            return _unquote(t.text)
        if t.text == "[":
            vals = []
            if not self.at("]"):
                vals.append(self.fact_value())
                while self.at(","):
                    self.next()
                    vals.append(self.fact_value())
            self.expect("]")
            return tuple(vals)
        raise DialectError(f"expected value, found {t.text!r}", t.line, t.col)

    def finish(self, comps, facts, fds, gcs, ent, client, pols) -> Program:
        rels = dict(self.decls)
        policy_names = {p.name for p in pols}
        # heads define IDB relations
        for name, arity, tok, is_head in self.uses:
            if is_head and name not in rels and name not in policy_names:
                rels[name] = Relation(name, arity, "idb")
        for i, p in enumerate(pols):
            base = rels.get(p.rel)
            if base is None:
                raise DialectError(f"policy {p.name} names unknown relation {p.rel}")
            # ordinary attributes, original destination, chosen partition
            arity = base.arity - 2 + 2
            rels[p.name] = Relation(p.name, arity, "function", arity - 1, "partition")
        for name, arity, tok, is_head in self.uses:
            r = rels.get(name)
            if r is None:
                # a fact-only relation is stored EDB
                if any(f[0] == name for f in facts) and not is_head:
                    rels[name] = Relation(name, arity, "edb")
                    continue
                raise DialectError(f"unknown relation {name}", tok.line, tok.col)
            if r.arity != arity:
                raise DialectError(
                    f"arity mismatch for {name}: declared {r.arity}, used with {arity}", tok.line, tok.col
                )
        return normalize(
            Program(
                relations=tuple(rels.values()),
                components=tuple(comps),
                facts=tuple(facts),
                fds=tuple(fds),
                gcs=tuple(gcs),
                entangled=tuple(ent),
                client=tuple(client),
                policies=tuple(pols),
            )
        )


def parse_program(text: str) -> Program:
    """Parse dialect source into a Program. Raises DialectError with line/column."""
    return _Parser(text).program()


def parse_facts(text: str) -> list[tuple[str, tuple[Value, ...]]]:
    """Parse a `.facts` file: one `relation(v1,...)` per line."""
    p = _Parser(text)
    out = []
    while p.peek().kind != "eof":
        out.append(p.fact())
    return out
