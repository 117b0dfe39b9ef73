"""SPARQL access to Wikidata: entity triples, filtering and sitelink lookups."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal as TypingLiteral, Mapping, Sequence
from urllib.parse import quote, unquote

from tailkg.core import EntityRef, Literal, RelationRef, TailKGError, Triple, unique_by
from tailkg.gateway import Gateway, HTTPStatusError, MalformedResponse, ServiceEndpoint

log = logging.getLogger(__name__)

ENTITY_PREFIX = "http://www.wikidata.org/entity/"
DEFAULT_ENDPOINT = "https://query.wikidata.org/sparql"
_ID_RE = re.compile(r"^[QPL]\d+$")
_TITLE_BATCH = 50


class MalformedResults(TailKGError):
    pass


Direction = TypingLiteral["as_subject", "as_object", "both"]


@dataclass(frozen=True)
class TripleQuery:
    entity: EntityRef
    direction: Direction = "both"
    language: str = "en"
    include_external_ids: bool = False

    def __post_init__(self) -> None:
        if self.direction not in ("as_subject", "as_object", "both"):
            raise ValueError(f"bad direction {self.direction!r}")
        if not _ID_RE.match(self.entity.id):
            raise ValueError(f"not a Wikidata entity id: {self.entity.id!r}")


@dataclass(frozen=True)
class RelationBlocklist:
    relations: Mapping[str, str] = field(
        default_factory=lambda: {"P734": "family name", "P735": "given name"}
    )

    def __contains__(self, relation_id: str) -> bool:
        return relation_id in self.relations

    def extended(self, extra: Mapping[str, str] | Iterable[str]) -> "RelationBlocklist":
        merged = dict(self.relations)
        if isinstance(extra, Mapping):
            merged.update(extra)
        else:
            merged.update({rid: "" for rid in extra})
        return RelationBlocklist(merged)

    @classmethod
    def empty(cls) -> "RelationBlocklist":
        return cls({})


# --------------------------------------------------------------------------
# Query construction
# --------------------------------------------------------------------------

_BRANCH_SUBJECT = """    {{
      BIND(wd:{qid} AS ?s)
      wd:{qid} ?wdt ?o .
      ?p wikibase:directClaim ?wdt .{ptype}
      FILTER(!isLiteral(?o) || lang(?o) = "" || langMatches(lang(?o), "{lang}"))
    }}"""

_BRANCH_OBJECT = """    {{
      BIND(wd:{qid} AS ?o)
      ?s ?wdt wd:{qid} .
      ?p wikibase:directClaim ?wdt .{ptype}
    }}"""

_PTYPE = "\n      ?p wikibase:propertyType ?ptype .\n      FILTER(?ptype != wikibase:ExternalId)"


def build_entity_triples_query(q: TripleQuery) -> str:
    """SELECT query for all direct-claim triples touching ``q.entity``.

    Output is byte-stable so it can be golden-tested.
    """
    ptype = "" if q.include_external_ids else _PTYPE
    fmt = {"qid": q.entity.id, "lang": q.language, "ptype": ptype}
    branches = []
    if q.direction in ("as_subject", "both"):
        branches.append(_BRANCH_SUBJECT.format(**fmt))
    if q.direction in ("as_object", "both"):
        branches.append(_BRANCH_OBJECT.format(**fmt))
    body = "\n    UNION\n".join(branches)
    return (
        "SELECT ?s ?sLabel ?p ?pLabel ?o ?oLabel WHERE {\n"
        "  {\n"
        f"{body}\n"
        "  }\n"
        f'  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "{q.language}". }}\n'
        "}\n"
    )


def run_select(gateway: Gateway, endpoint: ServiceEndpoint, query: str) -> list[dict[str, Any]]:
    """Execute a SELECT query and return ``results.bindings``."""
    resp = gateway.request(endpoint, "GET", params={"query": query, "format": "json"})
    if resp.status >= 400:
        raise HTTPStatusError(resp.status, endpoint.base_url, resp.text)
    data = resp.json()
    try:
        bindings = data["results"]["bindings"]
    except (KeyError, TypeError) as exc:
        raise MalformedResults("response lacks results.bindings") from exc
    if not isinstance(bindings, list):
        raise MalformedResults("results.bindings is not a list")
    return bindings


def _entity_id(uri: str) -> str | None:
    if uri.startswith(ENTITY_PREFIX):
        tail = uri[len(ENTITY_PREFIX):]
        if _ID_RE.match(tail):
            return tail
    return None


def _term(binding: Mapping[str, Any], var: str) -> Mapping[str, Any]:
    try:
        term = binding[var]
        term["value"]
    except (KeyError, TypeError) as exc:
        raise MalformedResults(f"binding missing required variable ?{var}") from exc
    return term


def _label(binding: Mapping[str, Any], var: str, fallback: str) -> str:
    t = binding.get(f"{var}Label")
    if isinstance(t, Mapping) and t.get("value"):
        return str(t["value"])
    return fallback


def parse_triple_bindings(bindings: Sequence[Mapping[str, Any]]) -> list[Triple]:
    """Turn ?s ?p ?o (+ labels) bindings into deduplicated triples, input order kept."""
    triples = []
    for b in bindings:
        s, p, o = _term(b, "s"), _term(b, "p"), _term(b, "o")
        sid = _entity_id(s["value"])
        pid = _entity_id(p["value"])
        if sid is None or pid is None:
            raise MalformedResults(f"unexpected subject/predicate IRI: {s['value']} {p['value']}")
        subject = EntityRef(sid, _label(b, "s", sid))
        predicate = RelationRef(pid, _label(b, "p", pid))
        if o.get("type") == "uri":
            oid = _entity_id(o["value"])
            obj = EntityRef(oid, _label(b, "o", oid)) if oid else Literal(o["value"])
        else:
            if not str(o["value"]):
                continue
            obj = Literal(str(o["value"]))
        triples.append(Triple(subject, predicate, obj))
    return unique_by(triples, key=lambda t: t.key)


def fetch_triples(
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    entity: EntityRef,
    language: str = "en",
    direction: Direction = "both",
) -> list[Triple]:
    query = build_entity_triples_query(TripleQuery(entity, direction, language))
    triples = parse_triple_bindings(run_select(gateway, endpoint, query))
    kept = [t for t in triples if t.involves(entity.id)]
    if len(kept) != len(triples):
        log.warning("%s: dropped %d triples not touching the entity", entity.id, len(triples) - len(kept))
    return kept


def filter_triples(triples: Sequence[Triple], blocklist: RelationBlocklist) -> list[Triple]:
    return [t for t in triples if t.predicate.id not in blocklist]


def eligible_entity(filtered_triples: Sequence[Triple], min_triples: int = 5, max_triples: int = 100) -> bool:
    return min_triples <= len(filtered_triples) <= max_triples


def eligibility_reason(filtered_triples: Sequence[Triple], min_triples: int = 5, max_triples: int = 100) -> str | None:
    n = len(filtered_triples)
    if n < min_triples:
        return f"fewer than {min_triples} triples ({n})"
    if n > max_triples:
        return f"more than {max_triples} triples ({n})"
    return None


# --------------------------------------------------------------------------
# Sitelinks
# --------------------------------------------------------------------------


def _article_url(title: str, site: str) -> str:
    return f"https://{site}/wiki/{quote(title.replace(' ', '_'), safe='')}"


def _title_from_url(url: str) -> str:
    return unquote(url.rsplit("/wiki/", 1)[-1]).replace("_", " ")


def build_sitelink_query(entity_ids: Sequence[str], site: str = "en.wikipedia.org", language: str = "en") -> str:
    values = " ".join(f"wd:{qid}" for qid in entity_ids)
    return (
        "SELECT ?item ?itemLabel ?article WHERE {\n"
        f"  VALUES ?item {{ {values} }}\n"
        "  ?article schema:about ?item ;\n"
        f"           schema:isPartOf <https://{site}/> .\n"
        f'  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "{language}". }}\n'
        "}\n"
    )


def build_title_lookup_query(titles: Sequence[str], site: str = "en.wikipedia.org", language: str = "en") -> str:
    values = " ".join(f"<{_article_url(t, site)}>" for t in titles)
    return (
        "SELECT ?article ?item ?itemLabel WHERE {\n"
        f"  VALUES ?article {{ {values} }}\n"
        "  ?article schema:about ?item .\n"
        f'  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "{language}". }}\n'
        "}\n"
    )


@dataclass(frozen=True)
class Sitelink:
    entity: EntityRef
    title: str


def article_titles(
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    entity_ids: Sequence[str],
    site: str = "en.wikipedia.org",
    language: str = "en",
) -> dict[str, Sitelink]:
    """Map entity ids to their article on ``site``. Ids without an article are absent."""
    out: dict[str, Sitelink] = {}
    ids = list(dict.fromkeys(entity_ids))
    for start in range(0, len(ids), _TITLE_BATCH):
        chunk = ids[start:start + _TITLE_BATCH]
        for b in run_select(gateway, endpoint, build_sitelink_query(chunk, site, language)):
            qid = _entity_id(_term(b, "item")["value"])
            if qid is None or qid in out:
                continue
            title = _title_from_url(_term(b, "article")["value"])
            out[qid] = Sitelink(EntityRef(qid, _label(b, "item", qid)), title)
    return out


def entities_for_titles(
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    titles: Sequence[str],
    site: str = "en.wikipedia.org",
    language: str = "en",
) -> dict[str, EntityRef]:
    """Resolve article titles to KG entities. Unknown titles are absent."""
    out: dict[str, EntityRef] = {}
    uniq = list(dict.fromkeys(titles))
    for start in range(0, len(uniq), _TITLE_BATCH):
        chunk = uniq[start:start + _TITLE_BATCH]
        for b in run_select(gateway, endpoint, build_title_lookup_query(chunk, site, language)):
            qid = _entity_id(_term(b, "item")["value"])
            if qid is None:
                continue
            title = _title_from_url(_term(b, "article")["value"])
            out.setdefault(title, EntityRef(qid, _label(b, "item", qid)))
    return out


def relations_of(triples: Iterable[Triple]) -> list[RelationRef]:
    """Distinct relations in first-appearance order."""
    return unique_by([t.predicate for t in triples], key=lambda r: r.id)


def triples_by_pair(entity_id: str, triples: Iterable[Triple]) -> dict[tuple[str, str], list[Triple]]:
    out: dict[tuple[str, str], list[Triple]] = {}
    for t in triples:
        if t.involves(entity_id):
            out.setdefault((entity_id, t.predicate.id), []).append(t)
    return out


__all__ = [
    "MalformedResults",
    "MalformedResponse",
    "RelationBlocklist",
    "Sitelink",
    "TripleQuery",
    "article_titles",
    "build_entity_triples_query",
    "eligible_entity",
    "entities_for_titles",
    "fetch_triples",
    "filter_triples",
    "parse_triple_bindings",
    "relations_of",
    "triples_by_pair",
]
