"""Deterministic in-process stand-ins for every external service.

``FakeServices`` is a gateway transport. It serves a small synthetic world
(people, places, organisations, works) with the same wire formats as the
real endpoints, so the pipeline can be recorded once and replayed from a
cassette.
"""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import parse_qsl, unquote, urlsplit

BASE = "http://fake.local"
ENTITY = "http://www.wikidata.org/entity/"

SERVICES = {
    "sparql": {"base_url": f"{BASE}/sparql", "max_in_flight": 2},
    "pageviews": {"base_url": f"{BASE}/pageviews"},
    "tagme": {"base_url": f"{BASE}/tagme", "auth_env": "TAGME_TOKEN", "auth_style": "query:gcube-token"},
    "chat": {"base_url": f"{BASE}/v1", "auth_env": "OPENAI_API_KEY", "model": "fake-chat"},
    "nli": {"base_url": f"{BASE}/nli"},
    "passages": {"base_url": f"{BASE}/passages"},
}
ENVIRON = {"TAGME_TOKEN": "tagme-secret", "OPENAI_API_KEY": "sk-fake-secret"}

TOKEN = re.compile(r"[a-z0-9]+")
STOP = {"the", "of", "a", "an", "is", "was", "what", "who", "and", "to", "in", "at", "about", "their", "me", "tell"}


def words(text: str) -> list[str]:
    return [w for w in TOKEN.findall(text.lower()) if w not in STOP]


def _h(*parts: str) -> int:
    return int(hashlib.sha256("\x1f".join(parts).encode()).hexdigest()[:8], 16)


@dataclass
class FakeTriple:
    s: str
    p: str
    o: str  # entity id, or "lit:<text>"


@dataclass
class World:
    labels: dict[str, str] = field(default_factory=dict)
    props: dict[str, str] = field(default_factory=dict)
    triples: list[FakeTriple] = field(default_factory=list)
    articles: dict[str, str] = field(default_factory=dict)  # qid -> title
    views: dict[str, list[Optional[int]]] = field(default_factory=dict)  # title -> 24 months (None = missing)
    refuse_generation: set[str] = field(default_factory=set)

    def triples_of(self, qid: str, direction: str) -> list[FakeTriple]:
        if direction == "s":
            return [t for t in self.triples if t.s == qid]
        return [t for t in self.triples if t.o == qid]


PROPS = {
    "P19": "place of birth",
    "P569": "date of birth",
    "P106": "occupation",
    "P69": "educated at",
    "P108": "employer",
    "P166": "award received",
    "P27": "country of citizenship",
    "P800": "notable work",
    "P734": "family name",
    "P50": "author",
    "P1412": "languages spoken",
}

PEOPLE = [
    # qid, name, monthly views (level), n extra works
    ("Q100", "Aldo Vessari", 23000, 12),
    ("Q101", "Brina Kolte", 41000, 0),
    ("Q102", "Cato Lindqvar", 15500, 0),
    ("Q103", "Dalia Ferrunt", 2400, 0),
    ("Q104", "Emil Sandhaug", 7300, 0),
    ("Q105", "Faye Okonjo", 1800, 0),
    ("Q106", "Gideon Prask", 420, 0),
    ("Q107", "Halla Brenvik", 160, 0),
    ("Q108", "Ivo Tamsel", 910, 0),
    ("Q109", "Juna Marek", 35, 0),
    ("Q110", "Kasimir Odelt", 64, 0),
    ("Q111", "Lio Varga", 18, 0),
    ("Q112", "Mira Quell", 27, 0),  # only three triples: ineligible
    ("Q113", "Nils Orrow", 4, 0),  # WPV below the lowest level
]
NO_ARTICLE = "Q199"

PLACES = {"Q500": "Tarrow", "Q501": "Velmont", "Q502": "Kessing", "Q503": "Orlac"}
COUNTRIES = {"Q510": "Estavia", "Q511": "Norland"}
ORGS = {"Q600": "Velmont Institute", "Q601": "Kessing University", "Q602": "Orlac Works", "Q603": "Tarrow Press"}
JOBS = {"Q700": "cartographer", "Q701": "composer", "Q702": "engineer", "Q703": "botanist"}
AWARDS = {"Q800": "Silver Compass", "Q801": "Harlan Prize"}
LANGS = {"Q850": "Estavian", "Q851": "Norlandic"}


def build_world() -> World:
    w = World(props=dict(PROPS))
    for group in (PLACES, COUNTRIES, ORGS, JOBS, AWARDS, LANGS):
        w.labels.update(group)
    work_id = 900
    for i, (qid, name, views, extra_works) in enumerate(PEOPLE):
        w.labels[qid] = name
        w.articles[qid] = name
        place = sorted(PLACES)[i % 4]
        org = sorted(ORGS)[(i + 1) % 4]
        triples = [
            FakeTriple(qid, "P19", place),
            FakeTriple(qid, "P569", f"lit:{1900 + 3 * i}-0{1 + i % 9}-1{i % 10}"),
            FakeTriple(qid, "P106", sorted(JOBS)[i % 4]),
        ]
        if qid != "Q112":
            triples += [
                FakeTriple(qid, "P69", sorted(ORGS)[i % 4]),
                FakeTriple(qid, "P108", org),
                FakeTriple(qid, "P27", sorted(COUNTRIES)[i % 2]),
                FakeTriple(qid, "P734", f"lit:{name.split()[1]}"),
            ]
            if i % 2 == 0:
                triples.append(FakeTriple(qid, "P166", sorted(AWARDS)[i % 4 // 2]))
            if i % 3 == 0:
                triples.append(FakeTriple(qid, "P1412", sorted(LANGS)[i % 2]))
            for k in range(max(1, extra_works)):
                wid = f"Q{work_id}"
                work_id += 1
                w.labels[wid] = f"{name.split()[1]} Atlas {k + 1}" if extra_works else f"The {name.split()[1]} Notes"
                triples.append(FakeTriple(qid, "P800", wid))
                if k == 0:
                    triples.append(FakeTriple(wid, "P50", qid))  # reverse direction
        w.triples.extend(triples)
        series: list[Optional[int]] = []
        for m in range(24):
            jitter = (_h(qid, str(m)) % 21 - 10) / 100.0
            series.append(max(0, int(round(views * (1 + jitter)))))
        if qid == "Q107":
            series[5] = None  # month missing from the API
            series[6] = None
        w.views[name] = series
    w.labels[NO_ARTICLE] = "Obscure Ridge"
    w.refuse_generation.add("Q104")
    return w


class FakeServices:
    """Transport callable: ``(method, url, headers, body, timeout) -> (status, text)``."""

    def __init__(self, world: Optional[World] = None):
        self.world = world or build_world()
        self.calls: Counter[str] = Counter()
        self.seen_headers: list[dict[str, str]] = []
        self._title_to_qid = {t: q for q, t in self.world.articles.items()}
        for q, lab in self.world.labels.items():
            self._title_to_qid.setdefault(lab, q)

    def __call__(self, method, url, headers, body, timeout):
        parts = urlsplit(url)
        path = parts.path
        query = dict(parse_qsl(parts.query))
        payload = json.loads(body.decode("utf-8")) if body else None
        self.seen_headers.append(dict(headers))
        for name in ("sparql", "pageviews", "tagme", "nli", "passages"):
            if path.startswith(f"/{name}"):
                self.calls[name] += 1
                return getattr(self, f"_{name}")(path, query, payload)
        if path.startswith("/v1/chat/completions"):
            self.calls["chat"] += 1
            if headers.get("Authorization") != f"Bearer {ENVIRON['OPENAI_API_KEY']}":
                return 401, json.dumps({"error": "unauthorized"})
            return self._chat(payload)
        return 404, "{}"

    # ------------------------------------------------------------------ sparql

    def _uri(self, qid: str) -> dict:
        return {"type": "uri", "value": ENTITY + qid}

    def _lab(self, qid: str) -> dict:
        return {"type": "literal", "value": self.world.labels.get(qid, self.world.props.get(qid, qid)), "xml:lang": "en"}

    def _sparql(self, path, query, payload):
        q = query.get("query", "")
        bindings = []
        if "VALUES ?item" in q:
            for qid in re.findall(r"wd:(Q\d+)", q):
                title = self.world.articles.get(qid)
                if title:
                    bindings.append({
                        "item": self._uri(qid),
                        "itemLabel": self._lab(qid),
                        "article": {"type": "uri", "value": "https://en.wikipedia.org/wiki/" + title.replace(" ", "_")},
                    })
        elif "VALUES ?article" in q:
            for raw in re.findall(r"<https://en\.wikipedia\.org/wiki/([^>]+)>", q):
                title = unquote(raw).replace("_", " ")
                qid = self._title_to_qid.get(title)
                if qid:
                    bindings.append({
                        "article": {"type": "uri", "value": "https://en.wikipedia.org/wiki/" + raw},
                        "item": self._uri(qid),
                        "itemLabel": self._lab(qid),
                    })
        else:
            m = re.search(r"BIND\(wd:(Q\d+) AS \?s\)", q)
            m2 = re.search(r"BIND\(wd:(Q\d+) AS \?o\)", q)
            rows = []
            if m:
                rows += self.world.triples_of(m.group(1), "s")
            if m2:
                rows += self.world.triples_of(m2.group(1), "o")
            for t in rows:
                b = {"s": self._uri(t.s), "sLabel": self._lab(t.s), "p": self._uri(t.p), "pLabel": self._lab(t.p)}
                if t.o.startswith("lit:"):
                    b["o"] = {"type": "literal", "value": t.o[4:]}
                else:
                    b["o"] = self._uri(t.o)
                    b["oLabel"] = self._lab(t.o)
                bindings.append(b)
        return 200, json.dumps({"head": {"vars": []}, "results": {"bindings": bindings}})

    # --------------------------------------------------------------- pageviews

    def _pageviews(self, path, query, payload):
        m = re.match(r"/pageviews/per-article/[^/]+/all-access/user/([^/]+)/monthly/(\d{8})\d\d/(\d{8})\d\d$", path)
        if not m:
            return 400, "{}"
        title = unquote(m.group(1)).replace("_", " ")
        series = self.world.views.get(title)
        if series is None:
            return 404, json.dumps({"detail": "not found"})
        start_y, start_m = int(m.group(2)[:4]), int(m.group(2)[4:6])
        items = []
        for k, v in enumerate(series):
            if v is None:
                continue
            idx = start_y * 12 + start_m - 1 + k
            items.append({"timestamp": f"{idx // 12:04d}{idx % 12 + 1:02d}0100", "views": v, "article": title})
        return 200, json.dumps({"items": items})

    # ------------------------------------------------------------------- tagme

    def _tagme(self, path, query, payload):
        if query.get("gcube-token") != ENVIRON["TAGME_TOKEN"]:
            return 401, "{}"
        text = query.get("text", "")
        low = text.lower()
        anns = []
        for qid, label in sorted(self.world.labels.items()):
            for mt in re.finditer(re.escape(label.lower()), low):
                person = qid in self.world.articles
                rho = 0.55 + (_h("rho", qid) % 40) / 100 if person else 0.1 + (_h("rho", qid) % 35) / 100
                start = mt.start()
                anns.append({"start": start, "end": start + len(label), "rho": round(rho, 3),
                             "title": self.world.articles.get(qid, label), "spot": text[start:start + len(label)]})
        if low.startswith("what"):
            anns.append({"start": 0, "end": 4, "rho": 0.3, "title": "What (disambiguation)", "spot": text[:4]})
        anns.sort(key=lambda a: (a["start"], a["title"]))
        return 200, json.dumps({"annotations": anns, "lang": query.get("lang", "en")})

    # -------------------------------------------------------------------- chat

    def _chat(self, payload):
        msgs = payload["messages"]
        system = next((m["content"] for m in msgs if m["role"] == "system"), "")
        user = msgs[-1]["content"]
        if user.startswith("Create a question"):
            text = self._qa_generation(user)
        elif user.startswith("Create a natural conversation"):
            text = self._conv_generation(user)
        elif "rank the relation" in system:
            text = self._rank(user)
        else:
            text = self._answer(system, user)
        return 200, json.dumps({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})

    def _qa_generation(self, prompt: str) -> str:
        pairs = prompt.split("Entity Relation Pairs:\n", 1)[1].splitlines()
        for qid in self.world.refuse_generation:
            if any(line.startswith(self.world.labels[qid] + " ") for line in pairs):
                return "I'm sorry, I can't help with that."
        blocks = []
        for line in pairs:
            ent, rel = line.split(" — ", 1)
            blocks.append(f"Entity Relation Pair: {line}\nQuestion: What is the {rel} of {ent}?")
        return "\n".join(blocks)

    def _conv_generation(self, prompt: str) -> str:
        lines = prompt.split("Knowledge Graph Triples:\n", 1)[1].splitlines()
        for qid in self.world.refuse_generation:
            if any(line.startswith("(" + self.world.labels[qid] + ",") for line in lines):
                return "Unfortunately I cannot write this conversation."
        parsed = [ln[1:-1].split(", ") for ln in lines]
        t1, t2, t3 = lines[0], lines[1], lines[2]
        (s, p1, o1), (_, p2, o2), (_, p3, o3) = parsed[0], parsed[1], parsed[2]
        return "\n".join([
            f"User: I'm reading about {s}. What is the {p1} of {s}?",
            f"Agent: The {p1} of {s} is {o1}.",
            f"T: {t1}",
            f"User: Interesting. And the {p2}?",
            f"Agent: Their {p2} is {o2}, and their {p3} is {o3}.",
            f"T: {t2}, {t3}",
            "User: Thanks!",
            "Agent: You're welcome.",
            "T: None",
        ])

    def _rank(self, prompt: str) -> str:
        fields = dict(line.split(": ", 1) for line in prompt.splitlines() if ": " in line)
        qwords = set(words(fields.get("Question", "")))
        rels = fields.get("Relations", "").split(", ")
        scored = sorted(range(len(rels)), key=lambda i: (-len(qwords & set(words(rels[i]))), i))
        return "\n".join(f"{k + 1}. {rels[i]}" for k, i in enumerate(scored[:5]))

    def _answer(self, system: str, user: str) -> str:
        lines = user.splitlines()
        query = next(ln[len("User: "):] for ln in reversed(lines) if ln.startswith("User: "))
        qwords = set(words(query))
        if "knowledge" not in system.lower():
            return "I am not certain about that."
        facts = [ln[1:-1].split(", ") for ln in lines if ln.startswith("(") and ln.endswith(")")]
        best, best_score = None, 0
        for f in facts:
            if len(f) != 3:
                continue
            score = len(qwords & set(words(f[1]))) * 2 + len(qwords & set(words(f[0])))
            if score > best_score:
                best, best_score = f, score
        if best is not None:
            return f"The {best[1]} of {best[0]} is {best[2]}."
        passages = [ln for ln in lines if ln and not ln.startswith(("Passage:", "User:", "Agent:", "("))]
        if passages:
            top = max(passages, key=lambda p: (len(qwords & set(words(p))), -passages.index(p)))
            return top.split(". ")[0].rstrip(".") + "."
        return "I am not certain about that."

    # --------------------------------------------------------------------- nli

    def _nli(self, path, query, payload):
        p, h = payload["premise"], payload["hypothesis"]
        pw, hw = set(words(p)), set(words(h))
        overlap = len(pw & hw) / max(len(hw), 1)
        neg = {"not", "never", "no", "isn"}
        if bool(neg & set(TOKEN.findall(p.lower()))) != bool(neg & set(TOKEN.findall(h.lower()))) and overlap > 0.3:
            e, c = 0.05, 0.85
        else:
            e = round(0.04 + 0.9 * overlap, 6)
            c = round(0.03 + 0.5 * (1 - overlap) * (_h(p, h) % 100) / 100, 6)
        n = round(1.0 - e - c, 6)
        return 200, json.dumps({"entailment": e, "neutral": n, "contradiction": c})

    # ---------------------------------------------------------------- passages

    def _documents(self) -> list[dict]:
        docs = []
        for qid, title in sorted(self.world.articles.items()):
            facts = []
            for t in self.world.triples_of(qid, "s"):
                obj = t.o[4:] if t.o.startswith("lit:") else self.world.labels[t.o]
                facts.append(f"The {self.world.props[t.p]} of {title} is {obj}.")
            for k in range(0, len(facts), 3):
                docs.append({"id": f"doc-{qid}-{k // 3}", "title": title, "text": " ".join(facts[k:k + 3])})
        long_text = " ".join(["Tarrow is a small harbour town with a long cartographic tradition."] * 12)
        docs.append({"id": "doc-tarrow", "title": "Tarrow", "text": long_text})
        return docs

    def _passages(self, path, query, payload):
        qwords = set(words(payload["query"]))
        scored = []
        for d in self._documents():
            dw = words(d["text"] + " " + d["title"])
            score = len(qwords & set(dw)) / (1 + len(set(dw))) ** 0.5
            scored.append({**d, "score": round(score, 6)})
        scored.sort(key=lambda d: (-d["score"], d["id"]))
        return 200, json.dumps({"passages": scored[: int(payload.get("k", 10))]})


def candidates() -> list[str]:
    """Candidate entity stream for the sampling stage."""
    return [q for q, *_ in PEOPLE] + [NO_ARTICLE]
