from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from tailkg.core import LEVELS, EntityRef, LongTailLevel, PopularityRecord
from tailkg.gateway import Gateway
from tailkg.popularity import (
    EmptySeries,
    NoArticle,
    SamplingPlan,
    Window,
    compute_wpv,
    fetch_pageviews,
    pageview_url,
    reservoir_sample,
    sample_entities,
)


def test_window_months():
    w = Window()
    assert len(w.months()) == 24
    assert w.months()[0] == "2021-01" and w.months()[-1] == "2022-12"
    with pytest.raises(ValueError):
        Window("2022-01", "2021-01")


def test_pageview_url_shape():
    url = pageview_url("http://pv/api/", "Aldo Vessari", Window())
    assert url == "http://pv/api/per-article/en.wikipedia/all-access/user/Aldo_Vessari/monthly/2021010100/2022122800"


def test_fetch_series(live_gateway, endpoints, fake):
    e = EntityRef("Q100", "Aldo Vessari")
    s = fetch_pageviews(live_gateway, endpoints["pageviews"], e, Window(), title="Aldo Vessari")
    assert len(s.monthly_views) == 24 and not s.sparse
    # independent mean over the raw fake series
    raw = fake.world.views["Aldo Vessari"]
    assert compute_wpv(s) == pytest.approx(sum(raw) / 24, abs=0)


def test_sparse_and_missing_series(live_gateway, endpoints):
    s = fetch_pageviews(live_gateway, endpoints["pageviews"], EntityRef("Q107", "Halla Brenvik"), Window(), title="Halla Brenvik")
    assert s.missing_months == ("2021-06", "2021-07") and s.monthly_views[5] == 0
    gone = fetch_pageviews(live_gateway, endpoints["pageviews"], EntityRef("Q9", "x"), Window(), title="No Such Page")
    assert gone.monthly_views == (0,) * 24 and len(gone.missing_months) == 24


def test_no_article(live_gateway, endpoints):
    with pytest.raises(NoArticle):
        fetch_pageviews(live_gateway, endpoints["pageviews"], EntityRef("Q199", "Obscure Ridge"), Window(), sparql=endpoints["sparql"])


def test_replayed_series_identical(replay_gateway, endpoints):
    e = EntityRef("Q100", "Aldo Vessari")
    a = fetch_pageviews(replay_gateway, endpoints["pageviews"], e, Window(), title="Aldo Vessari")
    b = fetch_pageviews(replay_gateway, endpoints["pageviews"], e, Window(), title="Aldo Vessari")
    assert a == b


def test_compute_wpv_examples():
    assert compute_wpv([100, 200, 300]) == 200.0
    assert compute_wpv([0, 0]) == 0.0
    with pytest.raises(EmptySeries):
        compute_wpv([])


def _records(level_wpv: float, n: int, prefix: str) -> list[PopularityRecord]:
    return [PopularityRecord.from_wpv(EntityRef(f"{prefix}{i}", f"e{i}"), level_wpv) for i in range(n)]


def test_sample_entities_seeded():
    recs = _records(50.0, 1000, "Q")
    plan = SamplingPlan({LongTailLevel.IV: 500}, seed=7)
    a = sample_entities(recs, plan)
    b = sample_entities(list(reversed(recs)), plan)
    assert len(a.by_level[LongTailLevel.IV]) == 500
    assert {r.entity.id for r in a.by_level[LongTailLevel.IV]} == {r.entity.id for r in b.by_level[LongTailLevel.IV]}


def test_sample_entities_shortfall():
    res = sample_entities(_records(50.0, 3, "Q"), SamplingPlan(seed=1))
    assert len(res.by_level[LongTailLevel.IV]) == 3
    assert res.shortfall[LongTailLevel.IV] == 497 and res.shortfall[LongTailLevel.I] == 500


def test_full_scale_targets():
    recs = []
    for k, wpv in enumerate((5e4, 5e3, 5e2, 50.0)):
        recs += _records(wpv, 700, f"Q{k}0")
    res = sample_entities(recs, SamplingPlan(seed=3))
    assert len(res.all_records()) == 2000
    assert all(len(res.by_level[lvl]) == 500 for lvl in LEVELS)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.integers(0, 20), st.integers(0, 2**32))
def test_reservoir_properties(n, k, seed):
    stream = [f"x{i}" for i in range(n)]
    out = reservoir_sample(stream, k, seed)
    assert len(out) == min(n, k)
    assert len(set(out)) == len(out) and set(out) <= set(stream)
    assert out == reservoir_sample(iter(stream), k, seed)
