"""Benchmark sample generation from entity triple sets."""
from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

from tailkg.core import (
    BenchmarkSample,
    EntityRef,
    LongTailLevel,
    SampleKind,
    TailKGError,
    Triple,
    Turn,
    unique_by,
)
from tailkg.gateway import ChatRequest, Gateway, ServiceEndpoint
from tailkg import kg
from tailkg.benchgen.prompts import (
    parse_conv_response,
    parse_qa_response,
    render_conv_prompt,
    render_qa_prompt,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntityTriples:
    """One line of the triples artifact: an eligible entity and its filtered triples."""

    entity: EntityRef
    level: LongTailLevel
    triples: tuple[Triple, ...]
    wpv: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity.to_dict(),
            "level": self.level.value,
            "wpv": self.wpv,
            "triples": [t.to_dict() for t in self.triples],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EntityTriples":
        return cls(
            EntityRef.from_dict(d["entity"]),
            LongTailLevel(d["level"]),
            tuple(Triple.from_dict(t) for t in d["triples"]),
            d.get("wpv"),
        )


@dataclass
class ReportEntry:
    entity_id: str
    status: str = "ok"
    samples: int = 0
    warnings: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "status": self.status,
            "samples": self.samples,
            "warnings": self.warnings,
            "flags": self.flags,
            "error": self.error,
        }


@dataclass(frozen=True)
class GenerationSettings:
    questions_per_entity: int = 3
    temperature: float = 0.0
    max_new_tokens: int = 2048


def answer_text(entity: EntityRef, triples: Sequence[Triple]) -> str:
    labels = unique_by([t.other_side(entity.id).label for t in triples], key=lambda s: s)
    return "; ".join(labels)


def _qa_for_entity(
    rec: EntityTriples, gateway: Gateway, endpoint: ServiceEndpoint, seed: int, settings: GenerationSettings
) -> tuple[list[BenchmarkSample], ReportEntry]:
    report = ReportEntry(rec.entity.id)
    relations = kg.relations_of(rec.triples)
    rng = random.Random(f"{seed}:{rec.entity.id}")
    chosen = rng.sample(relations, min(settings.questions_per_entity, len(relations)))
    pairs = [(rec.entity, r) for r in chosen]
    prompt = render_qa_prompt(pairs)
    text = gateway.chat(endpoint, ChatRequest("", prompt, settings.temperature, settings.max_new_tokens))
    parsed = parse_qa_response(text, pairs)
    report.warnings.extend(parsed.warnings)
    samples = []
    index = {r.id: k for k, r in enumerate(chosen)}
    for (entity, relation), question in parsed.items:
        refs = tuple(t for t in rec.triples if t.predicate.id == relation.id and t.involves(entity.id))
        samples.append(
            BenchmarkSample(
                id=f"qa-{entity.id}-{index[relation.id]}",
                entity=entity,
                level=rec.level,
                kind=SampleKind.QA,
                turns=(Turn("user", question), Turn("agent", answer_text(entity, refs))),
                reference_triples_per_turn=(refs,),
            )
        )
    samples.sort(key=lambda s: s.id)
    report.samples = len(samples)
    return samples, report


def _conv_for_entity(
    rec: EntityTriples, gateway: Gateway, endpoint: ServiceEndpoint, seed: int, settings: GenerationSettings
) -> tuple[list[BenchmarkSample], ReportEntry]:
    report = ReportEntry(rec.entity.id)
    prompt = render_conv_prompt(rec.triples)
    text = gateway.chat(endpoint, ChatRequest("", prompt, settings.temperature, settings.max_new_tokens))
    parsed = parse_conv_response(text, rec.triples)
    report.warnings.extend(parsed.warnings)
    if not parsed.references:
        report.status = "error"
        report.error = "no complete user/agent exchange in response"
        return [], report
    flags = ["unmatched_triple"] if parsed.flagged else []
    report.flags.extend(flags)
    sample = BenchmarkSample(
        id=f"conv-{rec.entity.id}",
        entity=rec.entity,
        level=rec.level,
        kind=SampleKind.CONVERSATION,
        turns=tuple(parsed.turns),
        reference_triples_per_turn=tuple(tuple(r) for r in parsed.references),
        flags=tuple(flags),
    )
    report.samples = 1
    return [sample], report


def generate_dataset(
    records: Iterable[EntityTriples],
    kind: SampleKind | str,
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    seed: int = 0,
    settings: GenerationSettings = GenerationSettings(),
    workers: int = 1,
) -> tuple[list[BenchmarkSample], list[ReportEntry]]:
    """Prompt the generator once per entity and assemble samples.

    Per-entity failures (transport, cassette miss, unparseable reply) land in
    the report; the batch always completes. Output order follows input order.
    """
    kind = SampleKind(kind)
    fn = _qa_for_entity if kind is SampleKind.QA else _conv_for_entity
    records = list(records)

    def run(rec: EntityTriples):
        try:
            return fn(rec, gateway, endpoint, seed, settings)
        except TailKGError as exc:
            log.warning("generation failed for %s: %s", rec.entity.id, exc)
            return [], ReportEntry(rec.entity.id, status="error", error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, records))
    else:
        results = [run(r) for r in records]
    samples = [s for batch, _ in results for s in batch]
    return samples, [rep for _, rep in results]
