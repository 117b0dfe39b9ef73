"""Constructed relation-ranking fixture.

Each question names exactly one relation label verbatim, and the AMR graph
carries that label's words as concepts. Relevance of a candidate is therefore
the indicator "candidate label words occur in the question", which a linear
read-out over the pair/AMR match features separates perfectly.
"""
from __future__ import annotations

import random

from tailkg.amr.penman import parse_penman
from tailkg.amr.train import TrainingSample
from tailkg.core import EntityRef, RelationRef

RELATIONS = [
    ("P19", "place of birth"), ("P20", "place of death"), ("P569", "date of birth"),
    ("P570", "date of death"), ("P106", "occupation"), ("P27", "country of citizenship"),
    ("P69", "educated at"), ("P108", "employer"), ("P26", "spouse"), ("P22", "father"),
    ("P25", "mother"), ("P40", "child"), ("P166", "award received"), ("P1412", "languages spoken"),
    ("P140", "religion"), ("P102", "member of political party"), ("P800", "notable work"),
    ("P463", "member of"), ("P39", "position held"), ("P551", "residence"),
]
_SYL = ["ka", "lo", "ven", "tir", "mo", "sa", "rud", "el", "bri", "no", "qua", "zet"]


def _name(rng: random.Random) -> str:
    return " ".join("".join(rng.choice(_SYL) for _ in range(2)).capitalize() for _ in range(2))


def _amr(words: list[str], name: str) -> str:
    ops = " ".join(f':op{i + 1} "{w}"' for i, w in enumerate(name.split()))
    inner = f"(c0 / {words[0]}"
    for i, w in enumerate(words[1:], start=1):
        inner += f" :mod (c{i} / {w})"
    inner += f" :poss (p / person :name (n / name {ops})))"
    return f"(a / amr-unknown :domain {inner})"


def build(n_questions: int = 50, n_candidates: int = 10, seed: int = 7):
    """Returns (samples, questions); questions are (query, graph, entity, candidates, gold ids)."""
    rng = random.Random(seed)
    samples, questions = [], []
    for q in range(n_questions):
        entity = EntityRef(f"Q{1000 + q}", _name(rng))
        cands = [RelationRef(pid, label) for pid, label in rng.sample(RELATIONS, n_candidates)]
        gold = cands[rng.randrange(n_candidates)]
        query = f"What is the {gold.label} of {entity.label}?"
        graph = parse_penman(_amr([w for w in gold.label.split() if w not in ("of", "at")], entity.label))
        for r in cands:
            samples.append(TrainingSample(query, graph, entity, r, int(r.id == gold.id)))
        questions.append((query, graph, entity, cands, {(entity.id, gold.id)}))
    return samples, questions
