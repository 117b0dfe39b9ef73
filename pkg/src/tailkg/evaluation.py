"""Knowledge-matching, relation-recall and entailment metrics with grouped reports."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from statistics import fmean
from typing import Any, Iterable, Mapping, Optional, Sequence

from tailkg.core import LEVELS, EntityRef, EvalItem, LongTailLevel, TailKGError, normalize, unique_by
from tailkg.gateway import Gateway, ServiceEndpoint

log = logging.getLogger(__name__)

BUCKETS = ("1", "2", "3", ">3")


class EmptyReference(TailKGError, ValueError):
    pass


class EmptyGold(TailKGError, ValueError):
    pass


@dataclass(frozen=True)
class MatchScores:
    km: int
    ekm: int
    rkm: float

    def to_dict(self) -> dict[str, Any]:
        return {"km": self.km, "ekm": self.ekm, "rkm": self.rkm}


Reference = str | Sequence[str]


def _forms(ref: Reference) -> list[str]:
    forms = [ref] if isinstance(ref, str) else list(ref)
    return [f for f in (normalize(x) for x in forms) if f]


def match_scores(prediction: str, references: Sequence[Reference]) -> MatchScores:
    """Which reference entities the prediction mentions.

    Each reference is a string or a list of acceptable surface forms; it counts
    as matched when any normalized form is a substring of the normalized
    prediction.
    """
    if not references:
        raise EmptyReference("at least one reference entity is required")
    y = normalize(prediction)
    hits = sum(1 for ref in references if any(f in y for f in _forms(ref)))
    n = len(references)
    return MatchScores(int(hits > 0), int(hits == n), hits / n)


def reference_entities(item: EvalItem) -> list[tuple[str, ...]]:
    """Surface forms of the answer side of every reference triple, deduplicated."""
    anchor = item.sample.entity.id
    sides = unique_by(
        [t.other_side(anchor) for t in item.reference_triples],
        key=lambda o: o.id if isinstance(o, EntityRef) else "literal:" + o.text,
    )
    return [tuple(o.surface_forms) for o in sides]


def gold_pairs(item: EvalItem) -> set[tuple[str, str]]:
    anchor = item.sample.entity.id
    return {
        (anchor if t.involves(anchor) else t.subject.id, t.predicate.id) for t in item.reference_triples
    }


def relation_recall(predicted: Iterable[tuple[str, str]], gold: Iterable[tuple[str, str]]) -> float:
    gold = set(gold)
    if not gold:
        raise EmptyGold("gold pair set is empty")
    return len(set(predicted) & gold) / len(gold)


def nli_eval(prediction: str, reference_response: str, gateway: Gateway, endpoint: ServiceEndpoint) -> tuple[float, float]:
    """(entailment, contradiction) with the prediction as premise."""
    if not prediction.strip() or not reference_response.strip():
        raise ValueError("prediction and reference must be non-empty")
    e, _, c = gateway.nli_scores(endpoint, prediction, reference_response)
    return e, c


def bucket_of(n_triples: int) -> Optional[str]:
    if n_triples <= 0:
        return None
    return str(n_triples) if n_triples <= 3 else ">3"


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass
class ItemScore:
    item_id: str
    sample_id: str
    level: LongTailLevel
    n_reference_triples: int
    match: Optional[MatchScores] = None
    recall: Optional[float] = None
    entailment: Optional[float] = None
    contradiction: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    @property
    def bucket(self) -> Optional[str]:
        return bucket_of(self.n_reference_triples)

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "item",
            "item_id": self.item_id,
            "sample_id": self.sample_id,
            "level": self.level.value,
            "n_reference_triples": self.n_reference_triples,
            "match": self.match.to_dict() if self.match else None,
            "recall": self.recall,
            "entailment": self.entailment,
            "contradiction": self.contradiction,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class GroupStats:
    name: str
    n: int
    km: Optional[float]
    ekm: Optional[float]
    rkm: Optional[float]
    recall: Optional[float]
    entailment: Optional[float]
    contradiction: Optional[float]

    @property
    def e_minus_c(self) -> Optional[float]:
        if self.entailment is None or self.contradiction is None:
            return None
        return self.entailment - self.contradiction

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "group",
            "group": self.name,
            "n": self.n,
            "km": self.km,
            "ekm": self.ekm,
            "rkm": self.rkm,
            "recall": self.recall,
            "entailment": self.entailment,
            "contradiction": self.contradiction,
            "e_minus_c": self.e_minus_c,
        }


def _mean(values: Sequence[float]) -> Optional[float]:
    return fmean(values) if values else None


def group_stats(name: str, items: Sequence[ItemScore]) -> GroupStats:
    matched = [i.match for i in items if i.match is not None]
    return GroupStats(
        name=name,
        n=len(items),
        km=_mean([m.km for m in matched]),
        ekm=_mean([m.ekm for m in matched]),
        rkm=_mean([m.rkm for m in matched]),
        recall=_mean([i.recall for i in items if i.recall is not None]),
        entailment=_mean([i.entailment for i in items if i.entailment is not None]),
        contradiction=_mean([i.contradiction for i in items if i.contradiction is not None]),
    )


@dataclass
class EvalReport:
    items: list[ItemScore]
    groups: dict[str, GroupStats]
    dialogue_nli: Optional[GroupStats] = None
    unscored: list[str] = field(default_factory=list)

    def records(self) -> list[dict[str, Any]]:
        out = [i.to_dict() for i in self.items]
        out.extend(g.to_dict() for g in self.groups.values())
        if self.dialogue_nli is not None:
            out.append(self.dialogue_nli.to_dict())
        out.extend({"type": "unscored", "item_id": i} for i in self.unscored)
        return out


def aggregate(items: Sequence[ItemScore], unscored: Sequence[str] = ()) -> EvalReport:
    """Means overall, per long-tail level and per reference-triple bucket."""
    groups = {"overall": group_stats("overall", items)}
    for lvl in LEVELS:
        members = [i for i in items if i.level is lvl]
        if members:
            groups[f"level:{lvl.value}"] = group_stats(f"level:{lvl.value}", members)
    for b in BUCKETS:
        members = [i for i in items if i.bucket == b]
        if members:
            groups[f"triples:{b}"] = group_stats(f"triples:{b}", members)

    dialogue = None
    by_sample: dict[str, list[ItemScore]] = {}
    for i in items:
        if i.item_id != i.sample_id and i.entailment is not None:
            by_sample.setdefault(i.sample_id, []).append(i)
    if by_sample:
        per_dialogue = [
            ItemScore(
                sid,
                sid,
                turns[0].level,
                0,
                entailment=fmean(t.entailment for t in turns),
                contradiction=fmean(t.contradiction for t in turns),
            )
            for sid, turns in sorted(by_sample.items())
        ]
        dialogue = group_stats("dialogue", per_dialogue)
    return EvalReport(list(items), groups, dialogue, sorted(unscored))


def score_item(
    item: EvalItem,
    prediction: str,
    predicted_pairs: Optional[Iterable[tuple[str, str]]] = None,
    nli: Optional[tuple[Gateway, ServiceEndpoint]] = None,
) -> ItemScore:
    score = ItemScore(item.item_id, item.sample.id, item.sample.level, len(item.reference_triples))
    refs = reference_entities(item)
    if refs:
        score.match = match_scores(prediction, refs)
    else:
        score.notes.append("no reference triples")
    if predicted_pairs is not None:
        gold = gold_pairs(item)
        if gold:
            score.recall = relation_recall(predicted_pairs, gold)
    if nli is not None:
        if prediction.strip():
            score.entailment, score.contradiction = nli_eval(prediction, item.reference_response, *nli)
        else:
            score.notes.append("empty prediction; NLI skipped")
    return score


# --------------------------------------------------------------------------
# Table output
# --------------------------------------------------------------------------

_COLUMNS = ("KM", "eKM", "rKM", "E", "C", "E-C")


def _fmt(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.3f}"


def _row(label: str, g: GroupStats) -> list[str]:
    return [label, _fmt(g.km), _fmt(g.ekm), _fmt(g.rkm), _fmt(g.entailment), _fmt(g.contradiction), _fmt(g.e_minus_c)]


def format_table(reports: Mapping[str, EvalReport]) -> str:
    """One row per knowledge setting, then per-level and per-bucket rows for each."""
    rows = [["setting", *_COLUMNS]]
    for setting, report in reports.items():
        rows.append(_row(setting, report.groups["overall"]))
    for setting, report in reports.items():
        for name, g in report.groups.items():
            if name != "overall":
                rows.append(_row(f"{setting} {name}", g))
        if report.dialogue_nli is not None:
            rows.append(_row(f"{setting} dialogue", report.dialogue_nli))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
