"""Every outbound service call goes through a :class:`Gateway`.

The gateway owns transport, authentication, per-endpoint concurrency limits,
retries and the record/replay cassette. Service-specific modules only build
requests and parse responses.

Cassettes are JSONL files, one :class:`CassetteEntry` per line, keyed by
``sha256(METHOD + "\\n" + canonical_url + "\\n" + canonical_body)``. The
canonical URL has its query parameters sorted; a JSON body is re-serialized
with sorted keys and no whitespace. Secrets are attached after fingerprinting
and never stored.
"""
from __future__ import annotations

import collections
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

from tailkg.core import TailKGError, dumps

log = logging.getLogger(__name__)

MODES = ("record", "replay", "live")


class GatewayError(TailKGError):
    pass


class TransportError(GatewayError):
    """Connection failure, timeout, HTTP 429 or 5xx. The only retried class."""


class CassetteMiss(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class HTTPStatusError(GatewayError):
    def __init__(self, status: int, url: str, body: str):
        super().__init__(f"HTTP {status} from {url}: {body[:200]}")
        self.status = status


# --------------------------------------------------------------------------
# Configuration values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt - 1, len(self.backoff) - 1)]


@dataclass(frozen=True)
class ServiceEndpoint:
    """Where a service lives and how to talk to it.

    ``auth_env`` names an environment variable holding the secret; the value
    itself never appears in configuration. ``auth_style`` is ``bearer``,
    ``header:<Name>`` or ``query:<param>``.
    """

    base_url: str
    auth_env: Optional[str] = None
    auth_style: str = "bearer"
    max_in_flight: int = 1
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 60.0
    min_interval: float = 0.0
    model: Optional[str] = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if not (self.auth_style == "bearer" or self.auth_style.startswith(("header:", "query:"))):
            raise ValueError(f"unsupported auth_style {self.auth_style!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], name: str = "") -> "ServiceEndpoint":
        retry = d.get("retry") or {}
        return cls(
            base_url=d["base_url"],
            auth_env=d.get("auth_env"),
            auth_style=d.get("auth_style", "bearer"),
            max_in_flight=int(d.get("max_in_flight", 1)),
            retry=RetryPolicy(
                max_attempts=int(retry.get("max_attempts", 3)),
                backoff=tuple(float(x) for x in retry.get("backoff", (0.5, 1.0, 2.0))),
            ),
            timeout=float(d.get("timeout", 60.0)),
            min_interval=float(d.get("min_interval", 0.0)),
            model=d.get("model"),
            name=name,
        )


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_new_tokens: int = 128

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "temperature": self.temperature,
            "max_new_tokens": self.max_new_tokens,
        }


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    score: float = 0.0
    title: str = ""


MAX_PASSAGE_WORDS = 100


# --------------------------------------------------------------------------
# Cassette
# --------------------------------------------------------------------------


def canonical_url(url: str) -> str:
    parts = urlsplit(url)
    query = urlencode(sorted(parse_qsl(parts.query, keep_blank_values=True)))
    return urlunsplit((parts.scheme, parts.netloc, parts.path, query, ""))


def canonical_body(body: Any) -> str:
    if body is None:
        return ""
    if isinstance(body, (bytes, bytearray)):
        return body.decode("utf-8")
    if isinstance(body, str):
        return body
    return dumps(body)


def fingerprint(method: str, url: str, body: Any = None) -> str:
    payload = "\n".join((method.upper(), canonical_url(url), canonical_body(body)))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CassetteEntry:
    fingerprint: str
    method: str
    url: str
    body: str
    status: int
    response: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "method": self.method,
            "url": self.url,
            "body": self.body,
            "status": self.status,
            "response": self.response,
        }


class Cassette:
    """Append-ordered store of recorded exchanges. Writes are serialized."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, CassetteEntry] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    entry = CassetteEntry(**d)
                    if entry.fingerprint in self._entries:
                        raise GatewayError(f"{self.path}:{lineno}: duplicate fingerprint {entry.fingerprint}")
                    self._entries[entry.fingerprint] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fp: str) -> bool:
        return fp in self._entries

    def get(self, fp: str) -> Optional[CassetteEntry]:
        return self._entries.get(fp)

    def entries(self) -> list[CassetteEntry]:
        return list(self._entries.values())

    def append(self, entry: CassetteEntry) -> None:
        with self._lock:
            if entry.fingerprint in self._entries:
                return
            self._entries[entry.fingerprint] = entry
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(dumps(entry.to_dict()) + "\n")


# --------------------------------------------------------------------------
# Transport
# --------------------------------------------------------------------------


class Transport(Protocol):
    def __call__(
        self, method: str, url: str, headers: Mapping[str, str], body: Optional[bytes], timeout: float
    ) -> tuple[int, str]: ...


class HttpxTransport:
    """Default live transport. Connection problems surface as TransportError."""

    def __init__(self) -> None:
        import httpx

        self._httpx = httpx
        self._client = httpx.Client(follow_redirects=True, headers={"User-Agent": "tailkg/0.1"})

    def __call__(self, method, url, headers, body, timeout):
        try:
            r = self._client.request(method, url, headers=dict(headers), content=body, timeout=timeout)
        except self._httpx.HTTPError as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        return r.status_code, r.text


class _FairLimiter:
    """FIFO admission with at most ``limit`` holders and a minimum start interval."""

    def __init__(self, limit: int, min_interval: float = 0.0, clock=time.monotonic, sleep=time.sleep):
        self.limit = limit
        self.min_interval = min_interval
        self._cond = threading.Condition()
        self._queue: collections.deque[int] = collections.deque()
        self._next_ticket = 0
        self._in_flight = 0
        self._last_start = -math.inf
        self._clock = clock
        self._sleep = sleep

    def __enter__(self):
        with self._cond:
            ticket = self._next_ticket
            self._next_ticket += 1
            self._queue.append(ticket)
            while self._queue[0] != ticket or self._in_flight >= self.limit:
                self._cond.wait()
            self._queue.popleft()
            self._in_flight += 1
            wait = self._last_start + self.min_interval - self._clock()
            self._last_start = max(self._clock(), self._last_start + self.min_interval)
            self._cond.notify_all()
        if wait > 0:
            self._sleep(wait)
        return self

    def __exit__(self, *exc):
        with self._cond:
            self._in_flight -= 1
            self._cond.notify_all()
        return False

    @property
    def in_flight(self) -> int:
        return self._in_flight


@dataclass(frozen=True)
class Response:
    status: int
    text: str

    def json(self) -> Any:
        try:
            return json.loads(self.text)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not JSON: {self.text[:200]!r}") from exc


def _is_transport_status(status: int) -> bool:
    return status == 429 or status >= 500


# --------------------------------------------------------------------------
# Gateway
# --------------------------------------------------------------------------


class Gateway:
    """Shared entry point for outbound calls.

    ``record``: serve from the cassette when the fingerprint is known,
    otherwise call live and append. ``replay``: cassette only, the transport
    is never touched. ``live``: always call, never write.
    """

    def __init__(
        self,
        mode: str = "replay",
        cassette: Cassette | str | Path | None = None,
        transport: Optional[Transport] = None,
        sleep: Callable[[float], None] = time.sleep,
        environ: Optional[Mapping[str, str]] = None,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.cassette = cassette if isinstance(cassette, Cassette) else Cassette(cassette)
        self._transport = transport
        self._sleep = sleep
        self._environ = os.environ if environ is None else environ
        self._limiters: dict[tuple[str, int, float], _FairLimiter] = {}
        self._limiters_lock = threading.Lock()
        self.request_counts: collections.Counter[str] = collections.Counter()
        self.live_calls = 0

    @property
    def transport(self) -> Transport:
        if self._transport is None:
            self._transport = HttpxTransport()
        return self._transport

    def _limiter(self, ep: ServiceEndpoint) -> _FairLimiter:
        key = (ep.base_url, ep.max_in_flight, ep.min_interval)
        with self._limiters_lock:
            lim = self._limiters.get(key)
            if lim is None:
                lim = self._limiters[key] = _FairLimiter(ep.max_in_flight, ep.min_interval, sleep=self._sleep)
            return lim

    def _authorize(self, ep: ServiceEndpoint, url: str, headers: dict[str, str]) -> str:
        if not ep.auth_env:
            return url
        secret = self._environ.get(ep.auth_env)
        if not secret:
            raise AuthError(f"environment variable {ep.auth_env} is not set (needed for {ep.base_url})")
        if ep.auth_style == "bearer":
            headers["Authorization"] = f"Bearer {secret}"
        elif ep.auth_style.startswith("header:"):
            headers[ep.auth_style.split(":", 1)[1]] = secret
        else:
            param = ep.auth_style.split(":", 1)[1]
            sep = "&" if urlsplit(url).query else "?"
            url = f"{url}{sep}{urlencode({param: secret})}"
        return url

    def request(
        self,
        endpoint: ServiceEndpoint,
        method: str = "GET",
        url: Optional[str] = None,
        params: Optional[Mapping[str, Any]] = None,
        json_body: Any = None,
    ) -> Response:
        url = url or endpoint.base_url
        if params:
            sep = "&" if urlsplit(url).query else "?"
            url = f"{url}{sep}{urlencode(sorted((k, str(v)) for k, v in params.items()))}"
        url = canonical_url(url)
        body = canonical_body(json_body)
        fp = fingerprint(method, url, body)
        self.request_counts[endpoint.name or endpoint.base_url] += 1

        if self.mode in ("replay", "record"):
            hit = self.cassette.get(fp)
            if hit is not None:
                return Response(hit.status, hit.response)
            if self.mode == "replay":
                raise CassetteMiss(f"no cassette entry for {method} {url} (fingerprint {fp[:12]})")

        status, text = self._send(endpoint, method, url, body)
        if self.mode == "record":
            self.cassette.append(CassetteEntry(fp, method.upper(), url, body, status, text))
        return Response(status, text)

    def _send(self, ep: ServiceEndpoint, method: str, url: str, body: str) -> tuple[int, str]:
        headers = {"Accept": "application/json"}
        if body:
            headers["Content-Type"] = "application/json"
        send_url = self._authorize(ep, url, headers)
        payload = body.encode("utf-8") if body else None
        last: Optional[Exception] = None
        for attempt in range(1, ep.retry.max_attempts + 1):
            try:
                with self._limiter(ep):
                    self.live_calls += 1
                    status, text = self.transport(method.upper(), send_url, headers, payload, ep.timeout)
                if _is_transport_status(status):
                    raise TransportError(f"HTTP {status} from {url}")
                return status, text
            except TransportError as exc:
                last = exc
                if attempt < ep.retry.max_attempts:
                    delay = ep.retry.delay(attempt)
                    log.warning("transport failure (%s); retry %d in %.1fs", exc, attempt, delay)
                    self._sleep(delay)
        raise TransportError(f"giving up after {ep.retry.max_attempts} attempts: {last}")

    # ------------------------------------------------------------------
    # Services with a fixed wire format
    # ------------------------------------------------------------------

    def chat(self, endpoint: ServiceEndpoint, req: ChatRequest) -> str:
        """OpenAI-compatible ``/chat/completions`` call; returns the completion text."""
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": req.user_prompt})
        body = {
            "model": endpoint.model or "default",
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
        }
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        resp = self.request(endpoint, "POST", url, json_body=body)
        if resp.status >= 400:
            raise HTTPStatusError(resp.status, url, resp.text)
        data = resp.json()
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"chat response lacks choices[0].message.content: {resp.text[:200]!r}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("chat content is not a string")
        return content

    def nli_scores(self, endpoint: ServiceEndpoint, premise: str, hypothesis: str) -> tuple[float, float, float]:
        """(entailment, neutral, contradiction) probabilities for a premise/hypothesis pair."""
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        resp = self.request(endpoint, "POST", json_body={"premise": premise, "hypothesis": hypothesis})
        if resp.status >= 400:
            raise HTTPStatusError(resp.status, endpoint.base_url, resp.text)
        data = resp.json()
        try:
            if isinstance(data, Mapping):
                probs = (data["entailment"], data["neutral"], data["contradiction"])
            else:
                probs = tuple(data)
            e, n, c = (float(x) for x in probs)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"NLI response is not three probabilities: {resp.text[:200]!r}") from exc
        if any(not (0.0 <= p <= 1.0) or math.isnan(p) for p in (e, n, c)) or abs(e + n + c - 1.0) > 1e-6:
            raise MalformedResponse(f"NLI probabilities invalid: {(e, n, c)}")
        return e, n, c

    def retrieve_passages(self, endpoint: ServiceEndpoint, query: str, k: int = 10) -> list[Passage]:
        """Top-``k`` passages from a dense-retriever service, best first."""
        if k < 1:
            raise ValueError("k must be >= 1")
        resp = self.request(endpoint, "POST", json_body={"query": query, "k": k})
        if resp.status >= 400:
            raise HTTPStatusError(resp.status, endpoint.base_url, resp.text)
        data = resp.json()
        try:
            raw = data["passages"]
            passages = [
                Passage(str(p["id"]), str(p["text"]), float(p.get("score", 0.0)), str(p.get("title", "")))
                for p in raw
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"retriever response malformed: {resp.text[:200]!r}") from exc
        passages.sort(key=lambda p: -p.score)
        out = []
        for p in passages[:k]:
            words = p.text.split()
            if len(words) > MAX_PASSAGE_WORDS:
                log.warning("passage %s has %d words; truncating to %d", p.id, len(words), MAX_PASSAGE_WORDS)
                p = Passage(p.id, " ".join(words[:MAX_PASSAGE_WORDS]), p.score, p.title)
            out.append(p)
        return out


def endpoints_from_config(cfg: Mapping[str, Mapping[str, Any]]) -> dict[str, ServiceEndpoint]:
    return {name: ServiceEndpoint.from_dict(d, name=name) for name, d in cfg.items()}


__all__ = [
    "AuthError",
    "Cassette",
    "CassetteEntry",
    "CassetteMiss",
    "ChatRequest",
    "Gateway",
    "GatewayError",
    "HTTPStatusError",
    "MalformedResponse",
    "Passage",
    "Response",
    "RetryPolicy",
    "ServiceEndpoint",
    "TransportError",
    "canonical_url",
    "fingerprint",
]
