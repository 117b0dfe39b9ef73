"""AMR graph values and reification (edge labels turned into nodes)."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Literal as TypingLiteral

import numpy as np

from tailkg.core import TailKGError


class GraphError(TailKGError, ValueError):
    pass


@dataclass(frozen=True)
class AmrGraph:
    """Rooted directed graph read from PENMAN.

    ``nodes`` holds ``(id, label)`` pairs; constant nodes (strings, numbers,
    bare symbols that are not variables) are listed in ``constants`` and keep
    their PENMAN spelling as label, quotes included.
    """

    nodes: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str, str], ...]
    root: str
    constants: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(tuple(n) for n in self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        object.__setattr__(self, "constants", frozenset(self.constants))
        ids = [n for n, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("node ids must be unique")
        known = set(ids)
        if self.root not in known:
            raise GraphError(f"root {self.root!r} is not a node")
        for s, _, t in self.edges:
            if s not in known or t not in known:
                raise GraphError(f"edge ({s}, {t}) references an unknown node")
        if not self.constants <= known:
            raise GraphError("constants must be nodes")
        reach = {self.root}
        frontier = [self.root]
        out: dict[str, list[str]] = {}
        for s, _, t in self.edges:
            out.setdefault(s, []).append(t)
        while frontier:
            for t in out.get(frontier.pop(), ()):
                if t not in reach:
                    reach.add(t)
                    frontier.append(t)
        if reach != known:
            raise GraphError(f"nodes unreachable from root: {sorted(known - reach)}")

    @property
    def labels(self) -> dict[str, str]:
        return dict(self.nodes)

    def variables(self) -> list[str]:
        return [n for n, _ in self.nodes if n not in self.constants]


def canonical_form(g: AmrGraph) -> tuple:
    """Invariant under renaming of constant nodes; equal forms mean isomorphic graphs.

    Variable names are kept, and every constant hangs off exactly one edge, so
    it is identified by (source, role, label).
    """
    labels = g.labels
    var_nodes = tuple(sorted((n, labels[n]) for n in g.variables()))
    var_edges = Counter((s, r, t) for s, r, t in g.edges if t not in g.constants)
    const_edges = Counter((s, r, labels[t]) for s, r, t in g.edges if t in g.constants)
    return (g.root, var_nodes, tuple(sorted(var_edges.items())), tuple(sorted(const_edges.items())))


def isomorphic(a: AmrGraph, b: AmrGraph) -> bool:
    return canonical_form(a) == canonical_form(b)


NodeKind = TypingLiteral["concept", "relation"]


@dataclass(frozen=True)
class ReifiedGraph:
    """Every labelled edge ``(u, l, v)`` becomes ``u -> r -> v`` with ``r`` labelled ``l``."""

    nodes: tuple[tuple[str, str, NodeKind], ...]
    edges: tuple[tuple[str, str], ...]
    root: str
    constants: frozenset[str] = frozenset()

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self) -> dict[str, int]:
        return {nid: i for i, (nid, _, _) in enumerate(self.nodes)}

    def adjacency(self, self_loops: bool = True) -> np.ndarray:
        """Symmetric boolean adjacency over node positions."""
        idx = self.index()
        a = np.zeros((self.n, self.n), dtype=bool)
        for s, t in self.edges:
            a[idx[s], idx[t]] = True
            a[idx[t], idx[s]] = True
        if self_loops:
            np.fill_diagonal(a, True)
        return a

    def permuted(self, order: list[int]) -> "ReifiedGraph":
        return ReifiedGraph(tuple(self.nodes[i] for i in order), self.edges, self.root, self.constants)


def reify(g: AmrGraph) -> ReifiedGraph:
    nodes: list[tuple[str, str, NodeKind]] = [(nid, label, "concept") for nid, label in g.nodes]
    edges: list[tuple[str, str]] = []
    for k, (s, role, t) in enumerate(g.edges):
        rid = f"rel:{k}"
        nodes.append((rid, role, "relation"))
        edges.append((s, rid))
        edges.append((rid, t))
    return ReifiedGraph(tuple(nodes), tuple(edges), g.root, g.constants)


def unreify(rg: ReifiedGraph) -> AmrGraph:
    """Inverse of :func:`reify`."""
    incoming: dict[str, list[str]] = {}
    outgoing: dict[str, list[str]] = {}
    for s, t in rg.edges:
        outgoing.setdefault(s, []).append(t)
        incoming.setdefault(t, []).append(s)
    concept_nodes = [(nid, label) for nid, label, kind in rg.nodes if kind == "concept"]
    edges = []
    for nid, label, kind in rg.nodes:
        if kind != "relation":
            continue
        src, tgt = incoming.get(nid, []), outgoing.get(nid, [])
        if len(src) != 1 or len(tgt) != 1:
            raise GraphError(f"relation node {nid} must have exactly one in- and one out-edge")
        edges.append((src[0], label, tgt[0]))
    return AmrGraph(tuple(concept_nodes), tuple(edges), rg.root, rg.constants)
