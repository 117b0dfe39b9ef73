"""Manual-audit sampling of annotated samples and annotator error rates."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from tailkg.core import LEVELS, BenchmarkSample, LongTailLevel

ANNOTATORS = ("annotator_1", "annotator_2")

AUDIT_INSTRUCTIONS = """The annotation of reference triples is correct if and only if:
1) the annotated reference triples fully support the query and answer pair.
2) the answer requires no more knowledge than the reference triples.
3) there is no unused triples annotated."""


@dataclass(frozen=True)
class Verdict:
    """One annotator's judgement; one boolean per audit rule."""

    supports: bool
    no_extra_knowledge: bool
    no_unused_triples: bool

    @property
    def correct(self) -> bool:
        return self.supports and self.no_extra_knowledge and self.no_unused_triples

    def to_dict(self) -> dict[str, bool]:
        return {
            "supports": self.supports,
            "no_extra_knowledge": self.no_extra_knowledge,
            "no_unused_triples": self.no_unused_triples,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Verdict":
        return cls(bool(d["supports"]), bool(d["no_extra_knowledge"]), bool(d["no_unused_triples"]))


@dataclass
class AuditManifest:
    sampled_ids: list[str]
    levels: dict[str, LongTailLevel]
    rate: float = 0.03
    seed: int = 0
    verdicts: dict[str, dict[str, Optional[Verdict]]] = field(default_factory=dict)
    instructions: str = AUDIT_INSTRUCTIONS

    def __post_init__(self) -> None:
        for sid in self.sampled_ids:
            self.verdicts.setdefault(sid, {a: None for a in ANNOTATORS})

    def per_level_counts(self) -> dict[LongTailLevel, int]:
        counts = {lvl: 0 for lvl in LEVELS}
        for sid in self.sampled_ids:
            counts[self.levels[sid]] += 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {
            "rate": self.rate,
            "seed": self.seed,
            "instructions": self.instructions,
            "samples": [
                {
                    "id": sid,
                    "level": self.levels[sid].value,
                    "verdicts": {
                        a: (v.to_dict() if v is not None else None) for a, v in self.verdicts[sid].items()
                    },
                }
                for sid in self.sampled_ids
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditManifest":
        ids = [s["id"] for s in d["samples"]]
        verdicts = {
            s["id"]: {a: (Verdict.from_dict(v) if v is not None else None) for a, v in s["verdicts"].items()}
            for s in d["samples"]
        }
        return cls(
            sampled_ids=ids,
            levels={s["id"]: LongTailLevel(s["level"]) for s in d["samples"]},
            rate=float(d["rate"]),
            seed=int(d["seed"]),
            verdicts=verdicts,
            instructions=d.get("instructions", AUDIT_INSTRUCTIONS),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AuditManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _allocate(total: int, available: Mapping[LongTailLevel, int]) -> dict[LongTailLevel, int]:
    """Split ``total`` as evenly as possible across levels, respecting capacity."""
    quota = {lvl: 0 for lvl in available}
    remaining = min(total, sum(available.values()))
    while remaining > 0:
        open_levels = [lvl for lvl in LEVELS if lvl in available and quota[lvl] < available[lvl]]
        share, extra = divmod(remaining, len(open_levels))
        for i, lvl in enumerate(open_levels):
            want = share + (1 if i < extra else 0)
            give = min(want, available[lvl] - quota[lvl])
            quota[lvl] += give
            remaining -= give
    return quota


def audit_sample(dataset: Sequence[BenchmarkSample], rate: float = 0.03, seed: int = 0) -> AuditManifest:
    """Pick ``round(rate * len(dataset))`` samples, split evenly across levels."""
    if not (0 < rate <= 1):
        raise ValueError("rate must be in (0, 1]")
    total = math.floor(rate * len(dataset) + 0.5)
    by_level: dict[LongTailLevel, list[BenchmarkSample]] = {}
    for s in dataset:
        by_level.setdefault(s.level, []).append(s)
    quota = _allocate(total, {lvl: len(v) for lvl, v in by_level.items()})
    rng = random.Random(seed)
    ids: list[str] = []
    levels: dict[str, LongTailLevel] = {}
    for lvl in LEVELS:
        if lvl not in by_level:
            continue
        pool = sorted(by_level[lvl], key=lambda s: s.id)
        for s in rng.sample(pool, quota[lvl]):
            ids.append(s.id)
            levels[s.id] = lvl
    return AuditManifest(ids, levels, rate, seed)


@dataclass(frozen=True)
class ErrorRates:
    n: int
    errors_per_annotator: tuple[int, ...]
    union_errors: int

    @property
    def mean_errors(self) -> float:
        return sum(self.errors_per_annotator) / len(self.errors_per_annotator)

    @property
    def mean_error_rate(self) -> float:
        """Average per-annotator error rate."""
        return self.mean_errors / self.n

    @property
    def union_error_rate(self) -> float:
        """A sample counts as correct only when every annotator marks it correct."""
        return self.union_errors / self.n


def error_rates(manifest: AuditManifest) -> ErrorRates:
    per_annotator = {a: 0 for a in ANNOTATORS}
    union = 0
    for sid in manifest.sampled_ids:
        verdicts = manifest.verdicts[sid]
        if any(verdicts.get(a) is None for a in ANNOTATORS):
            raise ValueError(f"sample {sid} is missing a verdict")
        wrong = [a for a in ANNOTATORS if not verdicts[a].correct]
        for a in wrong:
            per_annotator[a] += 1
        union += bool(wrong)
    if not manifest.sampled_ids:
        raise ValueError("empty audit manifest")
    return ErrorRates(len(manifest.sampled_ids), tuple(per_annotator[a] for a in ANNOTATORS), union)
