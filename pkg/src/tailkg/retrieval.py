"""Knowledge retrieval for answering: entity tagging, relation ranking, bundle assembly, answer prompts."""
from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Any, Literal as TypingLiteral, Mapping, Optional, Sequence

from tailkg import kg
from tailkg.amr.graph import AmrGraph
from tailkg.amr.model import RankerModel, score_pairs
from tailkg.core import EntityRef, RelationRef, TailKGError, Triple, Turn, normalize, unique_by
from tailkg.gateway import ChatRequest, Gateway, MalformedResponse, Passage, ServiceEndpoint
from tailkg.prompts import load_template

log = logging.getLogger(__name__)

Mode = TypingLiteral["none", "passages", "kg", "both"]
MODES: tuple[str, ...] = ("none", "passages", "kg", "both")

RHO_THRESHOLD = 0.22
MAX_ENTITIES = 5
TOP_RELATIONS = 5
TRIPLES_PER_PAIR = 10
TOP_PASSAGES = 10


class ResolutionFailure(TailKGError):
    pass


class EmptyParse(TailKGError):
    pass


# --------------------------------------------------------------------------
# Step 1: tagging
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaggedEntity:
    span: tuple[int, int]
    entity: EntityRef
    rho: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho {self.rho} outside [0, 1]")
        start, end = self.span
        if not (0 <= start <= end):
            raise ValueError(f"bad span {self.span}")

    def to_dict(self) -> dict[str, Any]:
        return {"span": list(self.span), "entity": self.entity.to_dict(), "rho": self.rho}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaggedEntity":
        return cls(tuple(d["span"]), EntityRef.from_dict(d["entity"]), float(d["rho"]))


def tagging_query(turns: Sequence[Turn]) -> str:
    """Text sent to the tagger: all user turns joined by spaces."""
    return " ".join(t.text for t in turns if t.role == "user")


def tag_entities(
    query: str,
    gateway: Gateway,
    tagger: ServiceEndpoint,
    sparql: ServiceEndpoint,
    language: str = "en",
    warnings: Optional[list[str]] = None,
) -> list[TaggedEntity]:
    """Annotate ``query`` and resolve each annotated page title to a KG entity.

    Annotations whose page has no KG entity are dropped and reported in ``warnings``.
    """
    if not query.strip():
        raise ValueError("tagging query is empty")
    resp = gateway.request(tagger, "GET", params={"text": query, "lang": language})
    if resp.status >= 400:
        raise MalformedResponse(f"tagger returned HTTP {resp.status}")
    data = resp.json()
    try:
        raw = [
            (int(a["start"]), int(a["end"]), float(a["rho"]), str(a["title"]))
            for a in data.get("annotations", [])
            if a.get("title")
        ]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise MalformedResponse(f"tagger response malformed: {resp.text[:200]!r}") from exc
    if not raw:
        return []
    resolved = kg.entities_for_titles(gateway, sparql, [title for *_, title in raw], language=language)
    out = []
    for start, end, rho, title in raw:
        ent = resolved.get(title)
        if ent is None:
            msg = f"annotation {title!r} at {start}:{end} has no KG entity; dropped"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        if end > len(query):
            msg = f"annotation {title!r} span {start}:{end} outside query; dropped"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out.append(TaggedEntity((start, end), ent, min(max(rho, 0.0), 1.0)))
    return out


def filter_tags(
    tags: Sequence[TaggedEntity], threshold: float = RHO_THRESHOLD, max_entities: int = MAX_ENTITIES
) -> list[TaggedEntity]:
    """Keep tags with rho >= threshold, best ``max_entities`` by rho.

    Ties go to the earlier span, then the smaller entity id. When one entity is
    tagged at several spans only its best tag is kept.
    """
    kept = sorted((t for t in tags if t.rho >= threshold), key=lambda t: (-t.rho, t.span[0], t.entity.id))
    kept = unique_by(kept, key=lambda t: t.entity.id)
    return kept[:max_entities]


# --------------------------------------------------------------------------
# Step 3: relation ranking
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RankedRelations:
    entity: EntityRef
    ranked: tuple[tuple[RelationRef, float], ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        scores = [s for _, s in self.ranked]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranked relation scores must be non-increasing")

    @property
    def relations(self) -> list[RelationRef]:
        return [r for r, _ in self.ranked]

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity.to_dict(),
            "ranked": [{"relation": r.to_dict(), "score": s} for r, s in self.ranked],
        }


_NUMBERING = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s*")


def render_ranking_prompt(query: str, entity: EntityRef, candidates: Sequence[RelationRef]) -> ChatRequest:
    user = load_template("relation_ranking_user").render(
        question=query, entity=entity.label, relations=", ".join(r.text for r in candidates)
    )
    return ChatRequest(load_template("relation_ranking_system").body, user)


def parse_ranking(text: str, candidates: Sequence[RelationRef], limit: int = TOP_RELATIONS) -> list[RelationRef]:
    """Map reply lines onto candidates by normalized label (or id); unknown lines are skipped."""
    by_key: dict[str, RelationRef] = {}
    for r in candidates:
        by_key.setdefault(normalize(r.text), r)
        by_key.setdefault(normalize(r.id), r)
    out: list[RelationRef] = []
    for line in text.splitlines():
        key = normalize(_NUMBERING.sub("", line).strip().strip("\"'`").rstrip(".,;"))
        r = by_key.get(key)
        if r is not None and r not in out:
            out.append(r)
        if len(out) == limit:
            break
    return out


def rank_relations_llm(
    query: str,
    entity: EntityRef,
    candidates: Sequence[RelationRef],
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    limit: int = TOP_RELATIONS,
) -> RankedRelations:
    """Ordinal scores limit..1 by reply position; falls back to candidate order if nothing parses."""
    if not candidates:
        raise ValueError("no candidate relations")
    text = gateway.chat(endpoint, render_ranking_prompt(query, entity, candidates))
    ranked = parse_ranking(text, candidates, limit)
    warnings: tuple[str, ...] = ()
    if not ranked:
        msg = f"{entity.id}: {EmptyParse.__name__}: no ranking line matched a candidate; using candidate order"
        log.warning(msg)
        warnings = (msg,)
        ranked = list(candidates[:limit])
    return RankedRelations(entity, tuple((r, float(limit - i)) for i, r in enumerate(ranked)), warnings)


def rank_relations_amr(
    query: str,
    amr: AmrGraph,
    entity: EntityRef,
    candidates: Sequence[RelationRef],
    model: RankerModel,
    limit: int = TOP_RELATIONS,
) -> RankedRelations:
    if not candidates:
        raise ValueError("no candidate relations")
    scores = score_pairs(query, amr, [(entity, r) for r in candidates], model)
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])  # stable on ties
    return RankedRelations(entity, tuple((candidates[i], scores[i]) for i in order[:limit]))


# --------------------------------------------------------------------------
# Bundle assembly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KnowledgeBundle:
    triples: tuple[Triple, ...] = ()
    passages: tuple[Passage, ...] = ()
    source_mode: str = "none"

    def __post_init__(self) -> None:
        if self.source_mode not in MODES:
            raise ValueError(f"unknown knowledge mode {self.source_mode!r}")

    @property
    def empty(self) -> bool:
        return not self.triples and not self.passages

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_mode": self.source_mode,
            "triples": [t.to_dict() for t in self.triples],
            "passages": [{"id": p.id, "title": p.title, "text": p.text, "score": p.score} for p in self.passages],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "KnowledgeBundle":
        return cls(
            tuple(Triple.from_dict(t) for t in d.get("triples", [])),
            tuple(Passage(p["id"], p["text"], float(p.get("score", 0.0)), p.get("title", "")) for p in d.get("passages", [])),
            d.get("source_mode", "none"),
        )


def pair_seed(seed: int, entity_id: str, relation_id: str) -> int:
    digest = hashlib.sha256(f"{seed}\x1f{entity_id}\x1f{relation_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def sample_pair_triples(triples: Sequence[Triple], k: int, seed: int) -> list[Triple]:
    """Uniform sample of ``min(k, len)`` triples, original order kept."""
    if len(triples) <= k:
        return list(triples)
    idx = sorted(random.Random(seed).sample(range(len(triples)), k))
    return [triples[i] for i in idx]


def assemble_bundle(
    tagged_entities: Sequence[TaggedEntity | EntityRef],
    rankings: Sequence[RankedRelations],
    triples_by_pair: Mapping[tuple[str, str], Sequence[Triple]],
    passages: Sequence[Passage],
    mode: str,
    seed: int = 0,
    top_relations: int = TOP_RELATIONS,
    triples_per_pair: int = TRIPLES_PER_PAIR,
    top_passages: int = TOP_PASSAGES,
) -> KnowledgeBundle:
    if mode not in MODES:
        raise ValueError(f"unknown knowledge mode {mode!r}")
    triples: list[Triple] = []
    if mode in ("kg", "both"):
        by_entity = {r.entity.id: r for r in rankings}
        for tagged in tagged_entities:
            ent = tagged.entity if isinstance(tagged, TaggedEntity) else tagged
            ranking = by_entity.get(ent.id)
            if ranking is None:
                continue
            for rel in ranking.relations[:top_relations]:
                pool = triples_by_pair.get((ent.id, rel.id), ())
                triples.extend(sample_pair_triples(pool, triples_per_pair, pair_seed(seed, ent.id, rel.id)))
    triples = unique_by(triples, key=lambda t: t.key)
    chosen_passages = tuple(passages[:top_passages]) if mode in ("passages", "both") else ()
    return KnowledgeBundle(tuple(triples), chosen_passages, mode)


# --------------------------------------------------------------------------
# Answer prompt
# --------------------------------------------------------------------------


def render_knowledge(bundle: KnowledgeBundle) -> str:
    blocks = []
    if bundle.triples:
        blocks.append("\n".join(t.render() for t in bundle.triples))
    for p in bundle.passages:
        blocks.append(f"Passage: {p.title or p.id}\n{p.text}")
    return "\n\n".join(blocks)


def render_answer_prompt(
    bundle: KnowledgeBundle,
    dialogue_or_question: Sequence[Turn] | str,
    temperature: float = 0.0,
    max_new_tokens: int = 128,
) -> ChatRequest:
    turns = (
        [Turn("user", dialogue_or_question)] if isinstance(dialogue_or_question, str) else list(dialogue_or_question)
    )
    if not turns or turns[-1].role != "user":
        raise ValueError("the dialogue must end with a user turn")
    dialogue = "\n".join(t.render() for t in turns)
    if bundle.empty:
        system = load_template("answer_system_no_knowledge").body
        user = dialogue
    else:
        system = load_template("answer_system_knowledge").body
        user = render_knowledge(bundle) + "\n\n" + dialogue
    return ChatRequest(system, user, temperature, max_new_tokens)


# --------------------------------------------------------------------------
# Per-item driver
# --------------------------------------------------------------------------


@dataclass
class RetrievalSettings:
    mode: str = "kg"
    ranker: str = "llm"
    oracle_entities: bool = False
    seed: int = 0
    language: str = "en"
    rho_threshold: float = RHO_THRESHOLD
    max_entities: int = MAX_ENTITIES
    top_relations: int = TOP_RELATIONS
    triples_per_pair: int = TRIPLES_PER_PAIR
    top_passages: int = TOP_PASSAGES
    blocklist: kg.RelationBlocklist = field(default_factory=kg.RelationBlocklist)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown knowledge mode {self.mode!r}")
        if self.ranker not in ("llm", "amr"):
            raise ValueError(f"unknown ranker {self.ranker!r}")


@dataclass
class RetrievalServices:
    gateway: Gateway
    tagger: Optional[ServiceEndpoint] = None
    sparql: Optional[ServiceEndpoint] = None
    chat: Optional[ServiceEndpoint] = None
    passages: Optional[ServiceEndpoint] = None
    model: Optional[RankerModel] = None
    amr_graphs: Mapping[str, AmrGraph] = field(default_factory=dict)


@dataclass
class RetrievalResult:
    bundle: KnowledgeBundle
    entities: list[EntityRef]
    rankings: list[RankedRelations]
    warnings: list[str]

    @property
    def predicted_pairs(self) -> set[tuple[str, str]]:
        return {(r.entity.id, rel.id) for r in self.rankings for rel in r.relations}


def _need(ep: Optional[ServiceEndpoint], what: str) -> ServiceEndpoint:
    if ep is None:
        raise ValueError(f"service endpoint {what!r} is not configured")
    return ep


def retrieve(
    item_id: str,
    query: str,
    gold_entity: EntityRef,
    services: RetrievalServices,
    settings: RetrievalSettings,
    tagging_text: Optional[str] = None,
) -> RetrievalResult:
    """Run the full retrieval for one query (tag, fetch, rank, assemble).

    ``tagging_text`` (default: ``query``) is what the tagger and passage
    retriever see; ranking always uses ``query``.
    """
    warnings: list[str] = []
    gw = services.gateway
    if settings.mode == "none":
        return RetrievalResult(KnowledgeBundle(source_mode="none"), [], [], warnings)

    entities: list[EntityRef] = []
    rankings: list[RankedRelations] = []
    pairs: dict[tuple[str, str], list[Triple]] = {}
    if settings.mode in ("kg", "both"):
        if settings.oracle_entities:
            entities = [gold_entity]
        else:
            tags = tag_entities(
                tagging_text or query, gw, _need(services.tagger, "tagme"), _need(services.sparql, "sparql"), settings.language, warnings
            )
            entities = [t.entity for t in filter_tags(tags, settings.rho_threshold, settings.max_entities)]
        for ent in entities:
            triples = kg.filter_triples(
                kg.fetch_triples(gw, _need(services.sparql, "sparql"), ent, settings.language), settings.blocklist
            )
            candidates = kg.relations_of(triples)
            if not candidates:
                warnings.append(f"{ent.id}: no candidate relations")
                continue
            pairs.update(kg.triples_by_pair(ent.id, triples))
            if settings.ranker == "llm":
                ranking = rank_relations_llm(
                    query, ent, candidates, gw, _need(services.chat, "chat"), settings.top_relations
                )
                warnings.extend(ranking.warnings)
            else:
                if services.model is None:
                    raise ValueError("AMR ranker selected but no model loaded")
                graph = services.amr_graphs.get(item_id)
                if graph is None:
                    raise ResolutionFailure(f"no AMR graph for item {item_id}")
                ranking = rank_relations_amr(query, graph, ent, candidates, services.model, settings.top_relations)
            rankings.append(ranking)

    passages: list[Passage] = []
    if settings.mode in ("passages", "both"):
        passages = gw.retrieve_passages(_need(services.passages, "passages"), tagging_text or query, settings.top_passages)

    bundle = assemble_bundle(
        entities,
        rankings,
        pairs,
        passages,
        settings.mode,
        settings.seed,
        settings.top_relations,
        settings.triples_per_pair,
        settings.top_passages,
    )
    return RetrievalResult(bundle, entities, rankings, warnings)
