"""Training loop (BCE + Adam) and finite-difference gradient verification."""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from tailkg.amr.graph import AmrGraph, reify
from tailkg.amr.model import (
    EncodedQuestion,
    ErpInput,
    Hyper,
    RankerModel,
    encode_question,
    graph_tokens,
    loss_and_grads,
    loss_only,
)
from tailkg.amr.penman import parse_penman, serialize_penman
from tailkg.core import EntityRef, RelationRef, TailKGError

log = logging.getLogger(__name__)


class DegenerateData(TailKGError, ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    epochs: int = 200
    batch_size: int = 64  # questions per step
    seed: int = 0
    negative_ratio: float = 9.0  # negatives kept per positive, per question
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("learning_rate", "epochs", "batch_size", "negative_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TrainingSample:
    query: str
    amr: AmrGraph
    entity: EntityRef
    relation: RelationRef
    label: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "amr": serialize_penman(self.amr),
            "entity": self.entity.to_dict(),
            "relation": self.relation.to_dict(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingSample":
        amr = d["amr"]
        return cls(
            d["query"],
            amr if isinstance(amr, AmrGraph) else parse_penman(amr),
            EntityRef.from_dict(d["entity"]),
            RelationRef.from_dict(d["relation"]),
            int(d["label"]),
        )


def load_training_jsonl(path: str | Path) -> list[TrainingSample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(TrainingSample.from_dict(json.loads(line)))
    return out


@dataclass
class _Group:
    query: str
    amr: AmrGraph
    pairs: list[ErpInput]
    labels: list[int]


def group_by_question(samples: Iterable[TrainingSample]) -> list[_Group]:
    """One group per (query, graph); first-seen order."""
    groups: dict[tuple, _Group] = {}
    for s in samples:
        key = (s.query, serialize_penman(s.amr))
        g = groups.get(key)
        if g is None:
            g = groups[key] = _Group(s.query, s.amr, [], [])
        g.pairs.append(ErpInput(s.query, s.entity, s.relation))
        g.labels.append(s.label)
    return list(groups.values())


def vocabulary_tokens(groups: Sequence[_Group]) -> list[str]:
    toks: list[str] = []
    for g in groups:
        toks.extend(graph_tokens(reify(g.amr)))
        for p in g.pairs:
            toks.extend(p.tokens())
    return toks


def _subsample(groups: Sequence[_Group], ratio: float, rng: random.Random) -> list[_Group]:
    out = []
    for g in groups:
        pos = [i for i, y in enumerate(g.labels) if y == 1]
        neg = [i for i, y in enumerate(g.labels) if y == 0]
        keep_neg = min(len(neg), math.ceil(ratio * max(len(pos), 1)))
        chosen = sorted(pos + rng.sample(neg, keep_neg))
        out.append(_Group(g.query, g.amr, [g.pairs[i] for i in chosen], [g.labels[i] for i in chosen]))
    return out


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


def train(
    samples: Sequence[TrainingSample],
    config: TrainConfig = TrainConfig(),
    hyper: Hyper = Hyper(),
    model: Optional[RankerModel] = None,
) -> tuple[RankerModel, list[float]]:
    """Fit a scorer. Returns the model and the full-data loss after every epoch."""
    labels = {s.label for s in samples}
    if not labels <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(labels)}")
    if labels != {0, 1}:
        raise DegenerateData("training data needs at least one positive and one negative label")
    rng = random.Random(config.seed)
    groups = _subsample(group_by_question(samples), config.negative_ratio, rng)
    if model is None:
        # a zero head sits on a saddle for match-type data; start from a random one
        model = RankerModel.initialize(vocabulary_tokens(groups), hyper, seed=config.seed, zero_head=False)
    else:
        model = model.copy()
    encoded: list[EncodedQuestion] = [
        encode_question(model, g.query, g.amr, g.pairs, g.labels) for g in groups
    ]
    opt = _Adam(model.params, config)
    order = list(range(len(encoded)))
    trace = []
    for epoch in range(config.epochs):
        if config.batch_size < len(order):
            rng.shuffle(order)
        for start in range(0, len(order), config.batch_size):
            batch = [encoded[i] for i in order[start:start + config.batch_size]]
            _, grads = loss_and_grads(model, batch)
            opt.step(model.params, grads)
        trace.append(loss_only(model, encoded))
        if epoch % 20 == 0 or epoch == config.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, trace[-1])
    return model, trace


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    per_parameter: dict[str, float]
    checked: int


def _relative(a: float, n: float, floor: float) -> float:
    if a == n:
        return 0.0
    return abs(a - n) / max(abs(a), abs(n), floor)


GradCorruption = Callable[[dict[str, np.ndarray]], None]


def grad_check_report(
    model: RankerModel,
    samples: Sequence[TrainingSample],
    step: float = 1e-5,
    corrupt: Optional[GradCorruption] = None,
    floor: float = 1e-6,
    params: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences over every coordinate.

    ``corrupt`` may mutate the analytic gradient dict before comparison (used as
    a negative control). The model is restored exactly after each probe.
    """
    groups = group_by_question(samples)
    batch = [encode_question(model, g.query, g.amr, g.pairs, g.labels) for g in groups]
    _, grads = loss_and_grads(model, batch)
    if corrupt is not None:
        corrupt(grads)
    per: dict[str, float] = {}
    count = 0
    for name in params or list(model.params):
        arr = model.params[name]
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_only(model, batch)
            arr[idx] = orig - step
            down = loss_only(model, batch)
            arr[idx] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, _relative(float(grads[name][idx]), numeric, floor))
            count += 1
        per[name] = worst
    return GradCheckReport(max(per.values(), default=0.0), per, count)


def grad_check(
    model: RankerModel,
    samples: Sequence[TrainingSample],
    step: float = 1e-5,
    corrupt: Optional[GradCorruption] = None,
) -> float:
    """Maximum relative error between analytic and numeric gradients."""
    return grad_check_report(model, samples, step, corrupt).max_relative_error
