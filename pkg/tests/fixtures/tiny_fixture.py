"""Smallest useful ranking instance: a three-node AMR and two candidate pairs."""
from __future__ import annotations

from tailkg.amr.model import Hyper, RankerModel
from tailkg.amr.penman import parse_penman
from tailkg.amr.train import TrainingSample, group_by_question, vocabulary_tokens
from tailkg.core import EntityRef, RelationRef

ENTITY = EntityRef("Q1", "Aldo Vessari")
GRAPH = parse_penman('(b / bear-02 :ARG1 (p / person) :location (a / amr-unknown))')
QUERY = "Where was Aldo Vessari born?"
HYPER = Hyper(d=8, heads=2, layers=2, mlp_hidden=8)


def samples() -> list[TrainingSample]:
    return [
        TrainingSample(QUERY, GRAPH, ENTITY, RelationRef("P19", "place of birth"), 1),
        TrainingSample(QUERY, GRAPH, ENTITY, RelationRef("P108", "employer"), 0),
    ]


def model(seed: int = 0, extra: tuple[str, ...] = ()) -> RankerModel:
    toks = vocabulary_tokens(group_by_question(samples())) + list(extra)
    return RankerModel.initialize(toks, HYPER, seed=seed, zero_head=False)
