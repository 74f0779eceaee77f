import pytest
from hypothesis import given
from hypothesis import strategies as st

from dedalus_opt.ast import (
    Agg,
    Atom,
    BinOp,
    Cmp,
    Component,
    Const,
    Delay,
    FDAnnotation,
    Program,
    Relation,
    Rule,
    Var,
    normalize,
)
from dedalus_opt.corpus import ROOT, load_program
from dedalus_opt.dialect import ASYNC, SEQ, SYNC, check_well_formed, classify_rule, pretty_print
from dedalus_opt.parser import DialectError, parse_facts, parse_program

CORPUS = sorted(str(p.relative_to(ROOT)) for p in ROOT.rglob("*.dl"))


# ---------------------------------------------------------------- corpus


@pytest.mark.parametrize("name", CORPUS)
def test_corpus_round_trips(name):
    p = load_program(name)
    text = pretty_print(p)
    assert parse_program(text) == p
    assert pretty_print(parse_program(text)) == text


@pytest.mark.parametrize("name", [n for n in CORPUS if not n.startswith("mutants/")])
def test_corpus_is_well_formed(name):
    assert check_well_formed(load_program(name)) == []


def test_listing2_rule_kinds(listing2):
    kinds = [classify_rule(r, listing2) for r in listing2.component("storage").rules]
    assert kinds == [SEQ, SEQ, SYNC, SYNC, ASYNC]


def test_listing1_rule_kinds(listing1):
    kinds = [classify_rule(r, listing1) for r in listing1.component("leader").rules]
    assert kinds == [SYNC, ASYNC, SYNC, SEQ, SYNC, SYNC, ASYNC, ASYNC]


def test_listing_text_survives_comments_and_layout():
    src = "@input in/3.\n# a comment\ncomponent a @ x {\n  out(v,l,t) :-\n    in(v,l,t).\n}\n"
    p = parse_program(src)
    assert str(p.component("a").rules[0]) == "out(v,l,t) :- in(v,l,t)."


# ---------------------------------------------------------------- errors


def _violations(src):
    return {v.kind for v in check_well_formed(parse_program(src))}


def test_mixed_body_times_rejected():
    src = "@input a/3.\n@input b/3.\ncomponent c @ x {\n  h(v,l,t) :- a(v,l,t), b(v,l,s).\n}\n"
    assert "constraint-2" in _violations(src)


def test_unbound_head_variable_rejected():
    src = "@input a/3.\ncomponent c @ x {\n  h(v,w,l,t) :- a(v,l,t).\n}\n"
    assert "safety" in _violations(src)


def test_time_in_data_rejected():
    src = "@input a/3.\ncomponent c @ x {\n  h(t,l,t) :- a(v,l,t).\n}\n"
    assert "entanglement" in _violations(src)


def test_time_in_data_allowed_when_flagged():
    src = "@input a/3.\n@idb h/3.\n@entangled h(0).\ncomponent c @ x {\n  h(t,l,t) :- a(v,l,t).\n}\n"
    assert _violations(src) == set()


def test_delay_to_same_location_rejected():
    src = "@input a/3.\ncomponent c @ x {\n  h(v,l,t') :- a(v,l,t), delay((v,l,t),t').\n}\n"
    assert "constraint-3" in _violations(src)


def test_unrelated_head_time_rejected():
    src = "@input a/3.\n@input b/3.\ncomponent c @ x {\n  h(v,l,s) :- a(v,l,t), b(v,l,t), s=t+2.\n}\n"
    assert "constraint-3" in _violations(src)


def test_edb_head_rejected():
    src = "@input a/3.\n@edb e/1.\ncomponent c @ x {\n  e(v) :- a(v,l,t).\n}\n"
    assert "edb-head" in _violations(src)


@pytest.mark.parametrize(
    "src",
    [
        "component c @ x { h(v,l,t) :- a(v,l,t). }",
        "@input a/3.\ncomponent c @ x { h(v,l,t) :- a(v,l). }",
        "@input a/3.\ncomponent c @ x { h(v,l,t) :- a(v,l,t) }",
        "@input a/3.\ncomponent c @ x { h(v,l,t) :- a(v,l,t).",
    ],
)
def test_parse_errors(src):
    with pytest.raises(DialectError):
        parse_program(src)


def test_parse_error_has_position():
    with pytest.raises(DialectError) as e:
        parse_program("@input a/3.\ncomponent c @ x {\n  h(v,l,t) :- a(v,l,t) ?\n}\n")
    assert e.value.line == 3


def test_parse_facts():
    assert parse_facts('a(1,"x y")\nb([1,2],z).') == [("a", (1, "x y")), ("b", ((1, 2), "z"))]


# ---------------------------------------------------------------- round trip


RESERVED = {"delay", "component"} | {f"{f}{z}" for f in ("count", "max", "min", "sum", "cert", "seal") for z in ("", "0")}
names = st.from_regex(r"[a-z][a-zA-Z0-9_]{0,5}", fullmatch=True).filter(lambda s: s not in RESERVED)
var_names = st.builds(lambda n, q: n + "'" * q, names, st.integers(0, 2))
consts = st.one_of(st.integers(-50, 50), st.text(st.characters(blacklist_categories=("Cs",)), max_size=6)).map(Const)
leaves = st.one_of(var_names.map(Var), consts)


@st.composite
def exprs(draw):
    e = draw(leaves)
    for _ in range(draw(st.integers(0, 2))):
        e = BinOp(draw(st.sampled_from("+-")), e, draw(leaves))
    return e


@st.composite
def atoms(draw, rel, arity, head=False):
    args = list(draw(st.lists(leaves, min_size=arity, max_size=arity)))
    if head and arity > 2 and draw(st.booleans()):
        func = draw(st.sampled_from(["count", "max", "min", "sum", "cert"]))
        vs = tuple(draw(st.lists(var_names, min_size=1, max_size=2)))
        args[0] = Agg(func, vs, func == "count" and draw(st.booleans()))
    return Atom(rel, tuple(args), not head and draw(st.booleans()))


@st.composite
def programs(draw):
    rels = draw(st.dictionaries(names, st.integers(2, 4), min_size=1, max_size=4))
    rel_names = sorted(rels)
    comps = []
    for cname in draw(st.lists(names, min_size=1, max_size=2, unique=True)):
        rules = []
        for _ in range(draw(st.integers(1, 3))):
            h = draw(st.sampled_from(rel_names))
            body = []
            for _ in range(draw(st.integers(1, 3))):
                kind = draw(st.integers(0, 2))
                if kind == 0:
                    b = draw(st.sampled_from(rel_names))
                    body.append(draw(atoms(b, rels[b])))
                elif kind == 1:
                    body.append(Cmp(draw(st.sampled_from(["=", "!=", "<", "<=", ">", ">="])), draw(exprs()), draw(exprs())))
                else:
                    ins = tuple(draw(st.lists(exprs(), min_size=1, max_size=3)))
                    body.append(Delay(ins, Var(draw(var_names))))
            label = draw(st.one_of(st.none(), names))
            rules.append(Rule(draw(atoms(h, rels[h], head=True)), tuple(body), label))
        addrs = tuple(draw(st.lists(names, min_size=1, max_size=3, unique=True)))
        comps.append(Component(cname, addrs, tuple(rules)))
    fds = ()
    if draw(st.booleans()):
        r = rel_names[0]
        fds = (FDAnnotation(r, (0,), rels[r] - 1, draw(names)),)
    return normalize(
        Program(
            relations=tuple(Relation(n, a, "idb") for n, a in rels.items()),
            components=tuple(comps),
            fds=fds,
            client=tuple(draw(st.lists(st.sampled_from(rel_names), max_size=2))),
        )
    )


@given(programs())
def test_round_trip_generated(p):
    text = pretty_print(p)
    assert parse_program(text) == p
    assert pretty_print(parse_program(text)) == text


@given(st.one_of(st.integers(-1000, 1000), st.text(max_size=12), st.tuples(st.integers(), st.text(max_size=4))))
def test_fact_values_round_trip(v):
    p = normalize(Program(relations=(Relation("e", 1, "edb"),), facts=(("e", (v,)),)))
    assert parse_program(pretty_print(p)).facts == p.facts
