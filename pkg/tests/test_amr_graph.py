from __future__ import annotations

import penman
import pytest
from hypothesis import given, settings, strategies as st

from penman_fixtures import GRAPHS
from tailkg.amr import AmrGraph, isomorphic, iter_penman_blocks, parse_penman, reify, serialize_penman, unreify
from tailkg.amr.graph import GraphError
from tailkg.amr.penman import ParseError


def test_minimal_cases():
    g = parse_penman("(w / want-01 :ARG0 (b / boy))")
    assert len(g.nodes) == 2 and g.edges == (("w", "ARG0", "b"),)
    r = parse_penman("(s / see-01 :ARG0 (b / boy) :ARG1 b)")
    assert len(r.nodes) == 2 and len(r.edges) == 2
    for bad in ["(w / want-01 :ARG0 (b / boy)", "(w / want-01))", "", "(w / x :ARG0)"]:
        with pytest.raises(ParseError):
            parse_penman(bad)


def test_parse_error_position():
    with pytest.raises(ParseError) as exc:
        parse_penman("(a / b\n  :ARG0 (c / d)))")
    assert exc.value.line == 2


def _oracle_view(text):
    """Instances and role edges per the reference PENMAN library."""
    g = penman.decode(text)
    inst = {(s, t) for s, r, t in g.triples if r == ":instance"}
    edges = sorted((s, r[1:], t) for s, r, t in g.triples if r != ":instance")
    return g.top, inst, edges


def _our_view(g: AmrGraph):
    labels = g.labels
    inst = {(n, lab) for n, lab in g.nodes if n not in g.constants}
    edges = sorted((s, r, labels[t] if t in g.constants else t) for s, r, t in g.edges)
    return g.root, inst, edges


@pytest.mark.parametrize("text", [t for t in GRAPHS if "-of" not in t])
def test_agrees_with_reference_library(text):
    assert _our_view(parse_penman(text)) == _oracle_view(text)


@pytest.mark.parametrize("text", GRAPHS)
def test_round_trip(text):
    g = parse_penman(text)
    again = parse_penman(serialize_penman(g))
    assert isomorphic(g, again)
    assert serialize_penman(again) == serialize_penman(g)


@pytest.mark.parametrize("text", GRAPHS)
def test_reify_counts_and_inverse(text):
    g = parse_penman(text)
    rg = reify(g)
    assert rg.n == len(g.nodes) + len(g.edges) and len(rg.edges) == 2 * len(g.edges)
    rel = [nid for nid, _, kind in rg.nodes if kind == "relation"]
    for r in rel:
        assert sum(1 for s, _ in rg.edges if s == r) == 1 and sum(1 for _, t in rg.edges if t == r) == 1
    assert unreify(rg) == g


def test_reify_small_examples():
    single = parse_penman("(a / amr-unknown)")
    assert reify(single).n == 1 and reify(single).edges == ()
    four = AmrGraph((("a", "x"), ("b", "y"), ("c", "z"), ("d", "w")), (("a", "r", "b"), ("b", "s", "c"), ("a", "t", "d")), "a")
    rg = reify(four)
    assert rg.n == 7 and len(rg.edges) == 6


def test_graph_validation():
    with pytest.raises(GraphError):
        AmrGraph((("a", "x"), ("b", "y")), (), "a")  # b unreachable
    with pytest.raises(GraphError):
        AmrGraph((("a", "x"),), (("a", "r", "z"),), "a")


def test_blocks_with_metadata():
    text = "# ::id q1 ::snt What?\n(a / amr-unknown)\n\n# ::id q2\n(b / boy)\n"
    blocks = list(iter_penman_blocks(text))
    assert [b.metadata["id"] for b in blocks] == ["q1", "q2"]
    assert blocks[0].metadata["snt"] == "What?"


_CONCEPTS = st.sampled_from(["boy", "girl", "want-01", "go-02", "city", "name", "amr-unknown"])
_ROLES = st.sampled_from(["ARG0", "ARG1", "mod", "location", "op1"])


@st.composite
def random_graphs(draw):
    n = draw(st.integers(1, 7))
    nodes = [(f"v{i}", draw(_CONCEPTS)) for i in range(n)]
    edges = [(f"v{draw(st.integers(0, i - 1))}", draw(_ROLES), f"v{i}") for i in range(1, n)]  # spanning tree
    for _ in range(draw(st.integers(0, 3))):
        s, t = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        edges.append((f"v{s}", draw(_ROLES), f"v{t}"))  # re-entrancies, possibly cycles
    consts = []
    for k in range(draw(st.integers(0, 2))):
        cid = f"c{k}"
        nodes.append((cid, draw(st.sampled_from(['"Paris"', "1901", "-"]))))
        edges.append((f"v{draw(st.integers(0, n - 1))}", "op2", cid))
        consts.append(cid)
    return AmrGraph(tuple(nodes), tuple(edges), "v0", frozenset(consts))


@settings(max_examples=80, deadline=None)
@given(random_graphs())
def test_round_trip_property(g):
    assert isomorphic(parse_penman(serialize_penman(g)), g)
    assert unreify(reify(g)) == g
