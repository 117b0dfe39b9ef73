"""Shared domain types, long-tail bucketing and text normalization."""
from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal as TypingLiteral, Sequence, Union

import jsonschema


class TailKGError(Exception):
    """Base class for all errors raised by this package."""


class OutOfRange(TailKGError, ValueError):
    pass


class SchemaError(TailKGError, ValueError):
    pass


# --------------------------------------------------------------------------
# Long-tail levels
# --------------------------------------------------------------------------


class LongTailLevel(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"

    @property
    def wpv_range(self) -> tuple[float, float]:
        return _LEVEL_RANGES[self]


# (lower, upper] per level
_LEVEL_RANGES = {
    LongTailLevel.I: (1e4, 1e5),
    LongTailLevel.II: (1e3, 1e4),
    LongTailLevel.III: (1e2, 1e3),
    LongTailLevel.IV: (1e1, 1e2),
}

LEVELS: tuple[LongTailLevel, ...] = tuple(LongTailLevel)


def level_of(wpv: float) -> LongTailLevel:
    """Bucket an average monthly page-view count into a long-tail level.

    Ranges are half-open ``(lower, upper]`` so every value strictly inside
    ``(10, 10**5)`` gets exactly one level.
    """
    if not (wpv > 10 and wpv < 1e5):
        raise OutOfRange(f"wpv {wpv!r} outside the benchmark range (10, 100000)")
    for level in LEVELS:
        lower, upper = _LEVEL_RANGES[level]
        if lower < wpv <= upper:
            return level
    raise AssertionError("unreachable")  # pragma: no cover


def normalize(text: str) -> str:
    """Lowercase, NFKC-fold and collapse whitespace. Idempotent."""
    out = text
    # lower() and NFKC do not commute for a handful of code points; iterate
    # to a fixed point so normalize(normalize(x)) == normalize(x).
    for _ in range(8):
        nxt = " ".join(unicodedata.normalize("NFKC", out).lower().split())
        if nxt == out:
            break
        out = nxt
    return out


# --------------------------------------------------------------------------
# KG values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EntityRef:
    id: str
    label: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("EntityRef.id must be non-empty")
        if not self.label:
            raise ValueError(f"EntityRef {self.id} needs a non-empty label")
        object.__setattr__(self, "aliases", tuple(self.aliases))

    @property
    def surface_forms(self) -> tuple[str, ...]:
        return (self.label, *self.aliases)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "label": self.label}
        if self.aliases:
            d["aliases"] = list(self.aliases)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EntityRef":
        return cls(d["id"], d["label"], tuple(d.get("aliases", ())))


@dataclass(frozen=True)
class RelationRef:
    id: str
    label: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("RelationRef.id must be non-empty")

    @property
    def text(self) -> str:
        return self.label or self.id

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RelationRef":
        return cls(d["id"], d.get("label", ""))


@dataclass(frozen=True)
class Literal:
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("literal text must be non-empty")

    @property
    def label(self) -> str:
        return self.text

    @property
    def surface_forms(self) -> tuple[str, ...]:
        return (self.text,)


TripleObject = Union[EntityRef, Literal]


@dataclass(frozen=True)
class Triple:
    subject: EntityRef
    predicate: RelationRef
    object: TripleObject

    @property
    def key(self) -> tuple[str, str, str]:
        """Identity used for deduplication."""
        o = self.object
        okey = o.id if isinstance(o, EntityRef) else "literal:" + o.text
        return (self.subject.id, self.predicate.id, okey)

    def involves(self, entity_id: str) -> bool:
        return self.subject.id == entity_id or (
            isinstance(self.object, EntityRef) and self.object.id == entity_id
        )

    def other_side(self, entity_id: str) -> TripleObject:
        """The end of the triple opposite to ``entity_id`` (object by default)."""
        if isinstance(self.object, EntityRef) and self.object.id == entity_id and self.subject.id != entity_id:
            return self.subject
        return self.object

    def render(self) -> str:
        return f"({self.subject.label}, {self.predicate.text}, {self.object.label})"

    def to_dict(self) -> dict[str, Any]:
        o = self.object
        obj = o.to_dict() if isinstance(o, EntityRef) else {"literal": o.text}
        return {"subject": self.subject.to_dict(), "predicate": self.predicate.to_dict(), "object": obj}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Triple":
        o = d["object"]
        obj: TripleObject = Literal(o["literal"]) if "literal" in o else EntityRef.from_dict(o)
        return cls(EntityRef.from_dict(d["subject"]), RelationRef.from_dict(d["predicate"]), obj)


@dataclass(frozen=True)
class PopularityRecord:
    entity: EntityRef
    wpv: float
    level: LongTailLevel
    sparse: bool = False

    def __post_init__(self) -> None:
        if self.wpv < 0:
            raise ValueError("wpv must be non-negative")
        if level_of(self.wpv) is not self.level:
            raise ValueError(f"level {self.level.value} inconsistent with wpv {self.wpv}")

    @classmethod
    def from_wpv(cls, entity: EntityRef, wpv: float, sparse: bool = False) -> "PopularityRecord":
        return cls(entity, wpv, level_of(wpv), sparse)

    def to_dict(self) -> dict[str, Any]:
        return {"entity": self.entity.to_dict(), "wpv": self.wpv, "level": self.level.value, "sparse": self.sparse}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PopularityRecord":
        return cls(EntityRef.from_dict(d["entity"]), float(d["wpv"]), LongTailLevel(d["level"]), bool(d.get("sparse", False)))


# --------------------------------------------------------------------------
# Benchmark samples
# --------------------------------------------------------------------------

Role = TypingLiteral["user", "agent"]


class SampleKind(str, enum.Enum):
    QA = "qa"
    CONVERSATION = "conv"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str

    def __post_init__(self) -> None:
        if self.role not in ("user", "agent"):
            raise ValueError(f"unknown role {self.role!r}")
        if not self.text:
            raise ValueError("turn text must be non-empty")

    def render(self) -> str:
        return f"{'User' if self.role == 'user' else 'Agent'}: {self.text}"


@dataclass(frozen=True)
class BenchmarkSample:
    """A QA item or annotated dialogue.

    ``reference_triples_per_turn`` has one entry per agent turn. A QA sample is
    stored as one user question followed by one agent turn holding the
    expected answer.
    """

    id: str
    entity: EntityRef
    level: LongTailLevel
    kind: SampleKind
    turns: tuple[Turn, ...]
    reference_triples_per_turn: tuple[tuple[Triple, ...], ...]
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(
            self, "reference_triples_per_turn", tuple(tuple(r) for r in self.reference_triples_per_turn)
        )
        object.__setattr__(self, "flags", tuple(self.flags))
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not self.turns:
            raise ValueError(f"sample {self.id} has no turns")
        for i, t in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "agent"
            if t.role != expected:
                raise ValueError(f"sample {self.id}: turn {i} should be {expected}, got {t.role}")
        n_agent = sum(t.role == "agent" for t in self.turns)
        if len(self.reference_triples_per_turn) != n_agent:
            raise ValueError(f"sample {self.id}: {n_agent} agent turns but {len(self.reference_triples_per_turn)} reference lists")
        if self.kind is SampleKind.QA and sum(t.role == "user" for t in self.turns) != 1:
            raise ValueError(f"QA sample {self.id} must contain exactly one question")

    @property
    def question(self) -> str:
        return self.turns[0].text

    def agent_turn_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.turns) if t.role == "agent"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "entity": self.entity.to_dict(),
            "level": self.level.value,
            "kind": self.kind.value,
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
            "reference_triples_per_turn": [[t.to_dict() for t in refs] for refs in self.reference_triples_per_turn],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BenchmarkSample":
        return cls(
            id=d["id"],
            entity=EntityRef.from_dict(d["entity"]),
            level=LongTailLevel(d["level"]),
            kind=SampleKind(d["kind"]),
            turns=tuple(Turn(t["role"], t["text"]) for t in d["turns"]),
            reference_triples_per_turn=tuple(
                tuple(Triple.from_dict(t) for t in refs) for refs in d["reference_triples_per_turn"]
            ),
            flags=tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class EvalItem:
    """One answerable unit: a QA question, or one agent turn of a dialogue with its history."""

    item_id: str
    sample: BenchmarkSample
    history: tuple[Turn, ...]  # ends with the user query being answered
    reference_response: str
    reference_triples: tuple[Triple, ...]

    @property
    def query(self) -> str:
        return self.history[-1].text

    @property
    def user_text(self) -> str:
        """All user turns so far, joined; used as the tagging input."""
        return " ".join(t.text for t in self.history if t.role == "user")


def expand_items(sample: BenchmarkSample) -> list[EvalItem]:
    items = []
    for k, idx in enumerate(sample.agent_turn_indices()):
        item_id = sample.id if sample.kind is SampleKind.QA else f"{sample.id}#{k}"
        items.append(
            EvalItem(
                item_id=item_id,
                sample=sample,
                history=sample.turns[:idx],
                reference_response=sample.turns[idx].text,
                reference_triples=sample.reference_triples_per_turn[k],
            )
        )
    return items


# --------------------------------------------------------------------------
# JSONL helpers and schema checks
# --------------------------------------------------------------------------


def dumps(obj: Any) -> str:
    """Canonical JSON used for every artifact line."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps(r.to_dict() if hasattr(r, "to_dict") else r))
            fh.write("\n")


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    text = resources.files("tailkg.schemas").joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_sample_record(record: dict[str, Any]) -> BenchmarkSample:
    """Check one serialized sample against the schema and the type invariants."""
    try:
        jsonschema.validate(record, load_schema("sample"))
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"sample schema violation at {list(exc.absolute_path)}: {exc.message}") from exc
    try:
        return BenchmarkSample.from_dict(record)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def check_samples_file(path: str | Path) -> list[str]:
    """Validate a benchmark JSONL file. Returns a list of problems (empty when valid)."""
    problems = []
    seen: set[str] = set()
    for lineno, rec in enumerate(read_jsonl(path), 1):
        try:
            s = validate_sample_record(rec)
        except SchemaError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        if s.id in seen:
            problems.append(f"line {lineno}: duplicate sample id {s.id}")
        seen.add(s.id)
    return problems


def load_samples(path: str | Path) -> list[BenchmarkSample]:
    return [BenchmarkSample.from_dict(r) for r in read_jsonl(path)]


def unique_by(items: Sequence[Any], key) -> list[Any]:
    seen = set()
    out = []
    for it in items:
        k = key(it)
        if k in seen:
            continue
        seen.add(k)
        out.append(it)
    return out


__all__ = [
    "BenchmarkSample",
    "EntityRef",
    "EvalItem",
    "LEVELS",
    "Literal",
    "LongTailLevel",
    "OutOfRange",
    "PopularityRecord",
    "RelationRef",
    "SampleKind",
    "SchemaError",
    "TailKGError",
    "Triple",
    "Turn",
    "check_samples_file",
    "dumps",
    "expand_items",
    "level_of",
    "load_samples",
    "normalize",
    "read_jsonl",
    "validate_sample_record",
    "write_jsonl",
]
