"""Rendering of generation prompts and parsing of the generator's replies."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from tailkg.core import EntityRef, RelationRef, TailKGError, Triple, Turn, normalize
from tailkg.prompts import load_template

log = logging.getLogger(__name__)

PAIR_SEPARATOR = " — "


class ParseError(TailKGError):
    pass


class NoBlocks(ParseError):
    pass


class RoleOrderViolation(ParseError):
    pass


_QUOTES = re.compile(r"[\"'`‘’‚‛“”„«»]")
_PAIR_SEPS = re.compile(r"[—–‒\-,:;()\[\]]+")
_COMMA_WS = re.compile(r"\s*,\s*")


def _canon_pair(text: str) -> str:
    return " ".join(_PAIR_SEPS.sub(" ", _QUOTES.sub("", normalize(text))).split())


def _canon_triple(text: str) -> str:
    t = _QUOTES.sub("", normalize(text)).strip()
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1]
    return _COMMA_WS.sub(", ", t).strip()


def render_pair(entity: EntityRef, relation: RelationRef) -> str:
    return f"{entity.label}{PAIR_SEPARATOR}{relation.text}"


def render_qa_prompt(pairs: Sequence[tuple[EntityRef, RelationRef]]) -> str:
    lines = "\n".join(render_pair(e, r) for e, r in pairs)
    return load_template("qa_generation").render(pairs=lines)


def render_conv_prompt(triples: Sequence[Triple]) -> str:
    return load_template("conv_generation").render(triples="\n".join(t.render() for t in triples))


# --------------------------------------------------------------------------
# QA replies
# --------------------------------------------------------------------------

_MARK = r"^\s*(?:[-*]\s*)?(?:\d+[.)]\s*)?\**\s*"
_PAIR_LINE = re.compile(_MARK + r"entity[\s-]*relation[\s-]*pairs?\s*\**\s*:\s*\**\s*(.*)$", re.IGNORECASE)
_QUESTION_LINE = re.compile(_MARK + r"question\s*\**\s*:\s*\**\s*(.*)$", re.IGNORECASE)


@dataclass
class QAParse:
    items: list[tuple[tuple[EntityRef, RelationRef], str]] = field(default_factory=list)
    orphans: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_qa_response(text: str, pairs: Sequence[tuple[EntityRef, RelationRef]]) -> QAParse:
    """Parse ``Entity Relation Pair: ... / Question: ...`` blocks.

    Pair lines are matched back to ``pairs`` by normalized label. Blocks that
    lack a question are skipped with a warning; blocks naming a pair that was
    not requested are reported as orphans.
    """
    wanted = {}
    for pair in pairs:
        wanted.setdefault(_canon_pair(render_pair(*pair)), pair)
    out = QAParse()
    blocks: list[tuple[str, list[str] | None]] = []
    current: list | None = None  # [pair_text, question_lines | None]
    for raw in text.splitlines():
        line = raw.strip()
        m = _PAIR_LINE.match(line)
        if m:
            if current is not None:
                blocks.append((current[0], current[1]))
            current = [m.group(1).strip(), None]
            continue
        m = _QUESTION_LINE.match(line)
        if m:
            if current is None:
                out.warnings.append(f"question without a pair line: {line[:80]!r}")
                continue
            if current[1] is not None:
                out.warnings.append(f"second question in block {current[0]!r} ignored")
                continue
            current[1] = [m.group(1).strip()]
            continue
        if current is not None and current[1] is not None and line and line != "...":
            current[1].append(line)
    if current is not None:
        blocks.append((current[0], current[1]))

    complete = 0
    seen = set()
    for pair_text, qlines in blocks:
        question = " ".join(q for q in (qlines or []) if q).strip()
        if not question:
            out.warnings.append(f"block {pair_text!r} has no Question; skipped")
            continue
        complete += 1
        key = _canon_pair(pair_text)
        pair = wanted.get(key)
        if pair is None:
            out.orphans.append(pair_text)
            continue
        if key in seen:
            out.warnings.append(f"pair {pair_text!r} answered twice; keeping the first")
            continue
        seen.add(key)
        out.items.append((pair, question))
    if complete == 0:
        raise NoBlocks("no 'Entity Relation Pair:' / 'Question:' block found")
    if out.orphans:
        out.warnings.append(f"{len(out.orphans)} block(s) named pairs outside the request")
    return out


# --------------------------------------------------------------------------
# Conversation replies
# --------------------------------------------------------------------------

_ROLE_LINE = re.compile(_MARK + r"(user|agent|t)\s*\**\s*:\s*\**\s*(.*)$", re.IGNORECASE)
_EMPTY_T = {"", "none", "n/a", "na", "-", "[]", "()", "no triples"}


def split_triple_groups(text: str) -> list[str]:
    """Top-level parenthesized groups of a ``T:`` line; the whole line if there are none."""
    groups = []
    depth = 0
    start = None
    for i, ch in enumerate(text):
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                groups.append(text[start:i + 1])
                start = None
    if not groups and text.strip():
        groups = [text.strip()]
    return groups


@dataclass
class ConvParse:
    turns: list[Turn] = field(default_factory=list)
    references: list[list[Triple]] = field(default_factory=list)  # one per agent turn
    unmatched: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.unmatched)


def parse_conv_response(text: str, source_triples: Sequence[Triple]) -> ConvParse:
    """Parse ``User:`` / ``Agent:`` / ``T:`` lines into alternating turns.

    Each ``T:`` triple is matched against ``source_triples`` by normalized
    rendered form, ignoring quote style. Triples not in the source list are
    collected in ``unmatched``.

    Raises RoleOrderViolation when the dialogue opens with the agent or two
    turns of the same role are adjacent.
    """
    by_form: dict[str, Triple] = {}
    for t in source_triples:
        by_form.setdefault(_canon_triple(t.render()), t)

    out = ConvParse()
    roles: list[str] = []
    texts: list[list[str]] = []
    refs: list[list[Triple]] = []  # parallel to turns, only used for agent turns
    last_kind = None
    for raw in text.splitlines():
        line = raw.strip()
        m = _ROLE_LINE.match(line)
        if not m:
            if line and line != "..." and last_kind in ("user", "agent"):
                texts[-1].append(line)
            continue
        kind, content = m.group(1).lower(), m.group(2).strip()
        if kind == "t":
            last_kind = "t"
            if not roles or roles[-1] != "agent":
                out.warnings.append(f"T line outside an agent turn ignored: {line[:80]!r}")
                continue
            if normalize(content) in _EMPTY_T:
                continue
            for group in split_triple_groups(content):
                hit = by_form.get(_canon_triple(group))
                if hit is None:
                    out.unmatched.append(group)
                elif hit not in refs[-1]:
                    refs[-1].append(hit)
            continue
        expected = "user" if not roles or roles[-1] == "agent" else "agent"
        if kind != expected:
            where = "dialogue opens with the agent" if not roles else f"two consecutive {kind} turns"
            raise RoleOrderViolation(f"{where} (line {line[:60]!r})")
        roles.append(kind)
        texts.append([content] if content else [])
        refs.append([])
        last_kind = kind

    if roles and roles[-1] == "user":
        out.warnings.append("trailing user turn without an answer dropped")
        roles.pop(); texts.pop(); refs.pop()
    for role, parts, r in zip(roles, texts, refs):
        body = " ".join(p for p in parts if p).strip()
        if not body:
            out.warnings.append(f"empty {role} turn")
            body = "..."
        out.turns.append(Turn(role, body))
        if role == "agent":
            out.references.append(r)
    if out.unmatched:
        out.warnings.append(f"{len(out.unmatched)} T-line triple(s) not in the source list")
    return out
