"""Page-view popularity and level-stratified entity sampling."""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence
from urllib.parse import quote

from tailkg.core import LEVELS, EntityRef, LongTailLevel, PopularityRecord, TailKGError, unique_by
from tailkg.gateway import Gateway, HTTPStatusError, MalformedResponse, ServiceEndpoint
from tailkg import kg

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://wikimedia.org/api/rest_v1/metrics/pageviews"


class NoArticle(TailKGError):
    pass


class EmptySeries(TailKGError, ValueError):
    pass


def _month_index(stamp: str) -> int:
    year, month = stamp.split("-")
    return int(year) * 12 + int(month) - 1


def _month_stamp(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


@dataclass(frozen=True)
class Window:
    """Months ``start`` (inclusive) to ``end`` (exclusive), as ``YYYY-MM``."""

    start: str = "2021-01"
    end: str = "2023-01"

    def __post_init__(self) -> None:
        if _month_index(self.end) <= _month_index(self.start):
            raise ValueError("window end must be after start")

    def months(self) -> list[str]:
        return [_month_stamp(i) for i in range(_month_index(self.start), _month_index(self.end))]


@dataclass(frozen=True)
class PageviewSeries:
    entity: EntityRef
    article_title: str
    months: tuple[str, ...]
    monthly_views: tuple[int, ...]
    missing_months: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.months) != len(self.monthly_views):
            raise ValueError("one count per month required")
        if any(v < 0 for v in self.monthly_views):
            raise ValueError("page-view counts must be non-negative")
        idx = [_month_index(m) for m in self.months]
        if idx and idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError("months must be contiguous")

    @property
    def sparse(self) -> bool:
        return bool(self.missing_months)


@dataclass(frozen=True)
class SamplingPlan:
    targets: Mapping[LongTailLevel, int] = field(default_factory=lambda: {lvl: 500 for lvl in LEVELS})
    seed: int = 0
    window: Window = field(default_factory=Window)

    def __post_init__(self) -> None:
        if any(n < 0 for n in self.targets.values()):
            raise ValueError("targets must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SamplingResult:
    by_level: dict[LongTailLevel, list[PopularityRecord]]
    shortfall: dict[LongTailLevel, int]

    def all_records(self) -> list[PopularityRecord]:
        return [r for lvl in LEVELS for r in self.by_level.get(lvl, [])]


def pageview_url(base_url: str, title: str, window: Window, project: str = "en.wikipedia") -> str:
    months = window.months()
    start = months[0].replace("-", "") + "0100"
    # the API's end timestamp is inclusive; the last day of the last month is safe
    end = months[-1].replace("-", "") + "2800"
    article = quote(title.replace(" ", "_"), safe="")
    return f"{base_url.rstrip('/')}/per-article/{project}/all-access/user/{article}/monthly/{start}/{end}"


def fetch_pageviews(
    gateway: Gateway,
    endpoint: ServiceEndpoint,
    entity: EntityRef,
    window: Window,
    title: Optional[str] = None,
    sparql: Optional[ServiceEndpoint] = None,
) -> PageviewSeries:
    """Monthly page views for ``entity``'s English article across ``window``.

    Months the API omits are recorded as zero and listed in ``missing_months``.
    """
    if title is None:
        if sparql is None:
            raise ValueError("need either a title or a SPARQL endpoint for the sitelink lookup")
        link = kg.article_titles(gateway, sparql, [entity.id]).get(entity.id)
        if link is None:
            raise NoArticle(f"{entity.id} has no English Wikipedia article")
        title = link.title
    resp = gateway.request(endpoint, "GET", pageview_url(endpoint.base_url, title, window))
    counts: dict[str, int] = {}
    if resp.status == 404:
        log.info("no page-view data for %s (%s)", entity.id, title)
    elif resp.status >= 400:
        raise HTTPStatusError(resp.status, endpoint.base_url, resp.text)
    else:
        try:
            for item in resp.json()["items"]:
                ts = str(item["timestamp"])
                counts[f"{ts[:4]}-{ts[4:6]}"] = counts.get(f"{ts[:4]}-{ts[4:6]}", 0) + int(item["views"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected page-view payload for {title}") from exc
    months = window.months()
    missing = tuple(m for m in months if m not in counts)
    return PageviewSeries(entity, title, tuple(months), tuple(counts.get(m, 0) for m in months), missing)


def compute_wpv(series: PageviewSeries | Sequence[int]) -> float:
    views = series.monthly_views if isinstance(series, PageviewSeries) else tuple(series)
    if not views:
        raise EmptySeries("cannot average an empty page-view series")
    return sum(views) / len(views)


def reservoir_sample(stream: Iterable[str], k: int, seed: int) -> list[str]:
    """Uniform sample of ``k`` items from a stream of unknown length (Algorithm R)."""
    rng = random.Random(seed)
    reservoir: list[str] = []
    for i, item in enumerate(stream):
        if i < k:
            reservoir.append(item)
        else:
            j = rng.randrange(i + 1)
            if j < k:
                reservoir[j] = item
    return reservoir


def sample_entities(candidates: Sequence[PopularityRecord], plan: SamplingPlan) -> SamplingResult:
    """Draw ``min(target, available)`` entities per level without replacement.

    Deterministic in ``plan.seed`` and independent of candidate input order.
    """
    rng = random.Random(plan.seed)
    pool = unique_by(candidates, key=lambda r: r.entity.id)
    by_level: dict[LongTailLevel, list[PopularityRecord]] = {}
    shortfall: dict[LongTailLevel, int] = {}
    for level in LEVELS:
        bucket = sorted((r for r in pool if r.level is level), key=lambda r: r.entity.id)
        target = plan.targets.get(level, 0)
        n = min(target, len(bucket))
        by_level[level] = rng.sample(bucket, n)
        if n < target:
            shortfall[level] = target - n
    return SamplingResult(by_level, shortfall)
