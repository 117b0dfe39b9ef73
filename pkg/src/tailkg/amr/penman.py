"""Reader and writer for the PENMAN serialization of AMR graphs.

Supported: variables with concepts ``(v / concept)``, roles (``:ARG0``,
``:op1``, ``:ARG0-of`` ...), re-entrancies written as bare variables, string
constants, numbers and other bare symbols, ``#`` comment/metadata lines and
``~e.N`` alignment suffixes (dropped).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Optional

from tailkg.amr.graph import AmrGraph
from tailkg.core import TailKGError


class ParseError(TailKGError, ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<slash>/)
  | (?P<role>:[^\s()"~/]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<align>~[^\s()]*)
  | (?P<symbol>[^\s()"~/:]+)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        if kind == "comment" and text[line_start:pos].strip():
            # '#' is only a comment marker at the start of a line
            m2 = re.compile(r"[^\s()\"~/:]+").match(text, pos)
            kind, value = "symbol", m2.group()
        if kind not in ("ws", "comment", "align"):
            toks.append(_Tok(kind, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rfind("\n") + 1
        pos += len(value)
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.end_line = text.count("\n") + 1
        self.end_col = len(text) - text.rfind("\n")
        self.defs: list[tuple[str, str]] = []
        self.def_set: set[str] = set()
        # target is ("node", var) | ("string", text) | ("symbol", text)
        self.edges: list[tuple[str, str, tuple[str, str]]] = []

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, kind: str, what: str) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise ParseError(f"unexpected end of input, expected {what}", self.end_line, self.end_col)
        if tok.kind != kind:
            raise ParseError(f"expected {what}, found {tok.text!r}", tok.line, tok.col)
        self.i += 1
        return tok

    def node(self) -> str:
        self.take("lparen", "'('")
        var_tok = self.take("symbol", "a variable")
        var = var_tok.text
        if var in self.def_set:
            raise ParseError(f"variable {var!r} defined twice", var_tok.line, var_tok.col)
        self.def_set.add(var)
        concept = ""
        tok = self.peek()
        if tok is not None and tok.kind == "slash":
            self.i += 1
            tok = self.peek()
            if tok is None or tok.kind not in ("symbol", "string"):
                where = (tok.line, tok.col) if tok else (self.end_line, self.end_col)
                raise ParseError("expected a concept after '/'", *where)
            concept = tok.text
            self.i += 1
        self.defs.append((var, concept))
        while True:
            tok = self.peek()
            if tok is None:
                raise ParseError("unbalanced parenthesis: missing ')'", self.end_line, self.end_col)
            if tok.kind == "rparen":
                self.i += 1
                return var
            if tok.kind != "role":
                raise ParseError(f"expected a role or ')', found {tok.text!r}", tok.line, tok.col)
            self.i += 1
            role = tok.text[1:]
            if not role:
                raise ParseError("empty role name", tok.line, tok.col)
            tgt = self.peek()
            if tgt is None:
                raise ParseError(f"role :{role} has no target", self.end_line, self.end_col)
            if tgt.kind == "lparen":
                child = self.node()
                self.edges.append((var, role, ("node", child)))
            elif tgt.kind in ("string", "symbol"):
                self.i += 1
                self.edges.append((var, role, (tgt.kind, tgt.text)))
            else:
                raise ParseError(f"role :{role} has no target (found {tgt.text!r})", tgt.line, tgt.col)

    def graph(self) -> AmrGraph:
        if self.peek() is None:
            raise ParseError("empty input", 1, 1)
        root = self.node()
        extra = self.peek()
        if extra is not None:
            kind = "unbalanced parenthesis: extra ')'" if extra.kind == "rparen" else f"trailing input {extra.text!r}"
            raise ParseError(kind, extra.line, extra.col)
        nodes: list[tuple[str, str]] = list(self.defs)
        constants: set[str] = set()
        edges: list[tuple[str, str, str]] = []
        used = set(self.def_set)
        k = 0
        for src, role, (kind, value) in self.edges:
            if kind == "node" or (kind == "symbol" and value in self.def_set):
                edges.append((src, role, value))
                continue
            cid = f"const:{k}"
            while cid in used:
                cid = "_" + cid
            k += 1
            used.add(cid)
            constants.add(cid)
            nodes.append((cid, value))
            edges.append((src, role, cid))
        return AmrGraph(tuple(nodes), tuple(edges), root, frozenset(constants))


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN graph. Raises :class:`ParseError` with a position."""
    return _Parser(text).graph()


@dataclass(frozen=True)
class PenmanBlock:
    graph: AmrGraph
    metadata: dict[str, str]


_META = re.compile(r"::(\S+)\s*((?:(?!\s::).)*)")


def iter_penman_blocks(text: str) -> Iterator[PenmanBlock]:
    """Graphs separated by blank lines; ``# ::key value`` metadata is collected."""
    for chunk in re.split(r"\n\s*\n", text):
        if not chunk.strip():
            continue
        meta = {}
        body = []
        for line in chunk.splitlines():
            s = line.strip()
            if s.startswith("#"):
                for key, value in _META.findall(s):
                    meta[key] = value.strip()
            else:
                body.append(line)
        if "".join(body).strip():
            yield PenmanBlock(parse_penman("\n".join(body)), meta)


def serialize_penman(g: AmrGraph, indent: int = 4) -> str:
    """Write ``g`` as PENMAN. ``parse_penman(serialize_penman(g))`` is isomorphic to ``g``."""
    labels = g.labels
    children: dict[str, list[tuple[str, str]]] = {}
    for s, r, t in g.edges:
        children.setdefault(s, []).append((r, t))
    emitted: set[str] = set()

    def emit(var: str, depth: int) -> str:
        emitted.add(var)
        head = f"({var} / {labels[var]}" if labels[var] else f"({var}"
        parts = [head]
        for role, tgt in children.get(var, []):
            if tgt in g.constants:
                value = labels[tgt]
            elif tgt in emitted:
                value = tgt
            else:
                value = emit(tgt, depth + 1)
            parts.append("\n" + " " * (indent * (depth + 1)) + f":{role} {value}")
        return "".join(parts) + ")"

    return emit(g.root, 0)

