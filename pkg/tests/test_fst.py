import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import compose_relations, enumerate_paths, random_acyclic_fst, relation
from wpctc.errors import ConfigError, ParseError
from wpctc.fst import (EPSILON, LOG, TROPICAL, SymbolTable, Wfst, compose, connect, linear_fst, read_text,
                       shortest_path, write_text)


def assert_relations_close(r1, r2, tol=1e-9):
    assert set(r1) == set(r2)
    for k in r1:
        assert abs(r1[k] - r2[k]) < tol, k


def test_semiring_plus():
    assert TROPICAL.plus(1.0, 2.0) == 1.0
    assert LOG.plus(1.0, 2.0) == pytest.approx(-math.log(math.exp(-1) + math.exp(-2)), abs=1e-12)
    assert LOG.plus(math.inf, 3.0) == 3.0
    assert TROPICAL.sum([]) == math.inf


def test_single_path_composition():
    syms = SymbolTable(["x", "y", "z"])
    a = linear_fst([syms.find("x")], [syms.find("y")], weight=1.0)
    b = linear_fst([syms.find("y")], [syms.find("z")], weight=2.0)
    c = compose(a, b)
    paths = list(enumerate_paths(c, 5))
    assert paths == [((1,), (3,), 3.0)]


def test_compose_with_identity_acceptor():
    rng = np.random.default_rng(1)
    a = random_acyclic_fst(rng, 4, 3, LOG)
    ident = Wfst(LOG)
    ident.add_state()
    ident.set_start(0)
    ident.set_final(0)
    for k in range(1, 4):
        ident.add_arc(0, k, k, 0.0, 0)
    assert_relations_close(relation(compose(a, ident), 6, "log"), relation(a, 6, "log"))


@pytest.mark.parametrize("seed", range(30))
@pytest.mark.parametrize("semiring", ["log", "tropical"])
def test_compose_matches_path_pairing(seed, semiring):
    rng = np.random.default_rng(seed)
    sr = LOG if semiring == "log" else TROPICAL
    a = random_acyclic_fst(rng, 4, 3, sr)
    b = random_acyclic_fst(rng, 4, 3, sr)
    expected = compose_relations(relation(a, 10, semiring), relation(b, 10, semiring), semiring)
    got = relation(compose(a, b), 10, semiring)
    assert_relations_close(got, expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_acyclic_fst(rng, 3, 2, LOG) for _ in range(3))
    left = relation(compose(compose(a, b), c), 10, "log")
    right = relation(compose(a, compose(b, c)), 10, "log")
    assert_relations_close(left, right)


def test_epsilon_filter_does_not_double_count():
    # a emits x then <eps>; b reads <eps> then x: naive composition has 2 paths for one pair
    a = Wfst(LOG)
    a.add_states(3)
    a.set_start(0)
    a.add_arc(0, 1, EPSILON, 0.5, 1)
    a.add_arc(1, 2, 1, 0.25, 2)
    a.set_final(2)
    b = Wfst(LOG)
    b.add_states(3)
    b.set_start(0)
    b.add_arc(0, EPSILON, 2, 1.0, 1)
    b.add_arc(1, 1, EPSILON, 0.5, 2)
    b.set_final(2)
    rel = relation(compose(a, b), 5, "log")
    assert rel == {((1, 2), (2,)): pytest.approx(2.25)}


def test_compose_rejects_epsilon_cycle():
    a = Wfst(TROPICAL)
    a.add_states(2)
    a.set_start(0)
    a.add_arc(0, EPSILON, EPSILON, 0.0, 1)
    a.add_arc(1, EPSILON, EPSILON, 0.0, 0)
    a.set_final(1)
    with pytest.raises(ConfigError, match="epsilon"):
        compose(a, linear_fst([1]))


def test_compose_allows_epsilon_output_loops():
    # blank:<eps> self-loops, as in the CTC topology, are fine
    a = Wfst(TROPICAL)
    a.add_state()
    a.set_start(0)
    a.set_final(0)
    a.add_arc(0, 1, EPSILON, 0.0, 0)
    a.add_arc(0, 2, 2, 0.0, 0)
    out = compose(a, linear_fst([2]))
    assert relation(out, 3, "tropical")[((1, 2, 1), (2,))] == 0.0


def test_compose_semiring_mismatch():
    with pytest.raises(ConfigError, match="semiring"):
        compose(linear_fst([1], semiring=LOG), linear_fst([1], semiring=TROPICAL))


def test_compose_symbol_mismatch():
    a = linear_fst([1], osymbols=SymbolTable(["a"]))
    b = linear_fst([1], isymbols=SymbolTable(["b"]))
    with pytest.raises(ConfigError, match="symbol"):
        compose(a, b)


def test_shortest_path_two_paths():
    g = Wfst(TROPICAL)
    g.add_states(2)
    g.set_start(0)
    g.add_arc(0, 1, 1, 1.5, 1)
    g.add_arc(0, 2, 2, 0.7, 1)
    g.set_final(1)
    best = shortest_path(g, 1)
    assert len(best) == 1
    assert best[0].weight == pytest.approx(0.7)
    assert best[0].ilabels == (2,)
    assert shortest_path(g, 0) == []


@pytest.mark.parametrize("seed", range(25))
def test_shortest_path_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_acyclic_fst(rng, 8, 3, TROPICAL, arc_prob=0.35)
    all_paths = sorted(w for _, _, w in enumerate_paths(g, 100))
    got = [p.weight for p in shortest_path(g, 3)]
    assert got == pytest.approx(all_paths[:3], abs=1e-9)


def test_shortest_path_negative_weights():
    g = Wfst(TROPICAL)
    g.add_states(3)
    g.set_start(0)
    g.add_arc(0, 1, 1, 2.0, 1)
    g.add_arc(1, 1, 1, -5.0, 2)
    g.add_arc(0, 2, 2, 0.0, 2)
    g.set_final(2)
    assert shortest_path(g, 1)[0].weight == pytest.approx(-3.0)


def test_shortest_path_requires_tropical():
    with pytest.raises(ConfigError):
        shortest_path(linear_fst([1], semiring=LOG))


def test_connect_drops_dangling_state():
    g = linear_fst([1, 2])
    dead = g.add_state()
    g.add_arc(0, 3, 3, 0.0, dead)
    c = connect(g)
    assert c.num_states == g.num_states - 1
    assert relation(c, 5, "tropical") == relation(g, 5, "tropical")


def test_connect_keeps_connected_graph():
    g = linear_fst([1, 2, 3])
    c = connect(g)
    assert c.num_states == g.num_states and c.num_arcs() == g.num_arcs()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_connect_preserves_language(seed):
    rng = np.random.default_rng(seed)
    g = random_acyclic_fst(rng, 6, 3, TROPICAL, arc_prob=0.3)
    c = connect(g)
    assert_relations_close(relation(c, 5, "tropical"), relation(g, 5, "tropical"))
    for s in c.states():
        assert c.arcs(s) or c.is_final(s)


def test_text_roundtrip_with_symbols():
    syms = SymbolTable(["a", "b"])
    g = linear_fst([1, 2], [2, 1], isymbols=syms, osymbols=syms, weight=0.5)
    g.add_arc(0, 2, EPSILON, 1.25, 2)
    text = write_text(g)
    assert text.splitlines()[0].startswith("0\t")
    back = read_text(text, syms, syms)
    assert relation(back, 5, "tropical") == relation(g, 5, "tropical")
    assert back.finals == g.finals


def test_text_start_state_without_arcs():
    g = Wfst(TROPICAL)
    g.add_states(2)
    g.set_start(1)
    g.set_final(1, 0.5)
    g.add_arc(0, 1, 1, 0.0, 1)
    back = read_text(write_text(g))
    assert back.start == 1 and back.finals == {1: 0.5}


def test_read_text_errors():
    with pytest.raises(ParseError, match="line 2"):
        read_text("0 1 1 1\n0 1 x\n")
    with pytest.raises(ParseError, match="unknown symbol"):
        read_text("0 1 a b\n1\n", SymbolTable(["a"]), SymbolTable(["a"]))


def test_symbol_table_roundtrip(tmp_path):
    syms = SymbolTable(["a", "b"])
    assert syms.find("<eps>") == 0 and syms.find(2) == "b"
    syms.write(tmp_path / "s.txt")
    assert SymbolTable.read(tmp_path / "s.txt") == syms
