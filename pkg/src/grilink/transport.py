"""HTTP plumbing shared by harvesting and probing.

``HttpxTransport`` does one network GET. ``PoliteTransport`` wraps any
transport with a request-rate ceiling, an in-flight limit, retry with
exponential backoff on 429/5xx, and an optional on-disk response cache.
Anything with a ``get(url) -> Response`` method can stand in for either,
which is how the in-process mock world is plugged in during tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol
from urllib.parse import quote

import httpx

from .errors import MalformedResponse, RateLimited, TransportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes
    headers: Mapping[str, str] = field(default_factory=dict)
    url: str = ""

    def json(self):
        try:
            return json.loads(self.body)
        except ValueError as exc:
            raise MalformedResponse(f"invalid JSON from {self.url}: {exc}") from exc


class Transport(Protocol):
    def get(self, url: str) -> Response: ...


class HttpxTransport:
    """Single-shot GETs over a shared httpx client.

    Bodies are returned decompressed; probe byte lengths depend on that.
    """

    def __init__(self, *, timeout: float = 30.0, headers: Mapping[str, str] | None = None,
                 client: httpx.Client | None = None):
        self._client = client or httpx.Client(timeout=timeout, headers=dict(headers or {}),
                                              follow_redirects=True)

    def get(self, url: str) -> Response:
        try:
            r = self._client.get(url)
        except httpx.HTTPError as exc:
            raise TransportError(f"GET {url} failed: {exc}") from exc
        return Response(r.status_code, r.content, dict(r.headers), url)

    def close(self) -> None:
        self._client.close()


class RateLimiter:
    """Spaces request starts at least ``1 / rate`` seconds apart. Thread-safe."""

    def __init__(self, rate: float | None, *, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate if rate else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self._sleep(start - now)


class ResponseCache:
    """Content-addressed store of successful response bodies, one file each.

    The filename is the SHA-256 of ``service`` and ``url``. Nothing is ever
    evicted automatically; delete the directory to start over.
    """

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    @staticmethod
    def key(service: str, url: str) -> str:
        return hashlib.sha256(f"{service}\n{url}".encode("utf-8")).hexdigest()

    def get(self, service: str, url: str) -> bytes | None:
        path = self.directory / self.key(service, url)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    def put(self, service: str, url: str, body: bytes) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, self.directory / self.key(service, url))


def _retry_after(headers: Mapping[str, str]) -> float | None:
    for name, value in headers.items():
        if name.lower() == "retry-after":
            try:
                return max(0.0, float(value))
            except ValueError:
                return None
    return None


class PoliteTransport:
    def __init__(
        self,
        inner: Transport,
        service: str = "default",
        *,
        rate: float | None = None,
        max_in_flight: int = 1,
        retries: int = 3,
        backoff: float = 0.5,
        backoff_ceiling: float = 30.0,
        cache: ResponseCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.inner = inner
        self.service = service
        self.retries = retries
        self.backoff = backoff
        self.backoff_ceiling = backoff_ceiling
        self.cache = cache
        self.limiter = RateLimiter(rate, sleep=sleep)
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._sleep = sleep
        self.requests_sent = 0
        self.cache_hits = 0
        self._count_lock = threading.Lock()

    def _delay(self, attempt: int, hinted: float | None = None) -> float:
        wait = hinted if hinted is not None else self.backoff * (2 ** attempt)
        return min(wait, self.backoff_ceiling)

    def get(self, url: str) -> Response:
        if self.cache is not None:
            body = self.cache.get(self.service, url)
            if body is not None:
                with self._count_lock:
                    self.cache_hits += 1
                return Response(200, body, {}, url)

        with self._slots:
            for attempt in range(self.retries + 1):
                last_try = attempt == self.retries
                self.limiter.acquire()
                with self._count_lock:
                    self.requests_sent += 1
                try:
                    response = self.inner.get(url)
                except TransportError:
                    if last_try:
                        raise
                    self._sleep(self._delay(attempt))
                    continue
                if response.status == 429:
                    hinted = _retry_after(response.headers)
                    if last_try:
                        raise RateLimited(f"{self.service}: rate limited on {url}", hinted)
                    log.info("%s rate limited, backing off", self.service)
                    self._sleep(self._delay(attempt, hinted))
                    continue
                if response.status >= 500:
                    if last_try:
                        raise TransportError(f"{self.service}: HTTP {response.status} for {url}")
                    self._sleep(self._delay(attempt))
                    continue
                if response.status == 200 and self.cache is not None:
                    self.cache.put(self.service, url, response.body)
                return response
        raise AssertionError("unreachable")


@dataclass
class ServiceConfig:
    """Where a remote service lives and how politely to talk to it.

    ``templates`` map an endpoint name to a path (with optional query) in
    ``str.format`` syntax; placeholder values are percent-encoded with no
    safe characters before substitution.
    """

    base_url: str
    templates: dict[str, str]
    rate: float | None = None
    max_in_flight: int = 1
    retries: int = 3
    backoff: float = 0.5
    backoff_ceiling: float = 30.0
    timeout: float = 30.0
    token_env: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "ServiceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown service settings: {sorted(unknown)}")
        return cls(**{k: (dict(v) if k == "templates" else v) for k, v in data.items()})


DEFAULT_SERVICES: dict[str, ServiceConfig] = {
    "crossref": ServiceConfig(
        "https://api.crossref.org",
        {"works_by_funder": "/funders/{funder_id}/works?rows={rows}&cursor={cursor}&filter={filter}"},
    ),
    "scholix": ServiceConfig(
        "https://api.scholexplorer.openaire.eu",
        {"links": "/v2/Links?sourcePid={doi}&targetType=dataset"},
    ),
    "datacite": ServiceConfig("https://api.datacite.org", {"doi": "/dois/{doi}"}),
    "orcid": ServiceConfig("https://pub.orcid.org", {"search": "/v3.0/search/?q=doi-self:{doi}"}),
    # PAR has no API; its search paths are fixed in grilink.probe.
    "par": ServiceConfig(
        "https://par.nsf.gov",
        {},
        rate=2.0,
        max_in_flight=4,
        retries=1,
    ),
}


def encode_value(value: object) -> str:
    return quote(str(value), safe="")


class Service:
    """A transport bound to one service's base URL and endpoint templates."""

    def __init__(self, name: str, config: ServiceConfig, transport: Transport):
        self.name = name
        self.config = config
        self.transport = transport

    def url(self, endpoint: str, **values: object) -> str:
        try:
            template = self.config.templates[endpoint]
        except KeyError:
            raise KeyError(f"service {self.name!r} has no endpoint template {endpoint!r}") from None
        path = template.format(**{k: encode_value(v) for k, v in values.items()})
        return self.config.base_url.rstrip("/") + path

    def get(self, endpoint: str, **values: object) -> Response:
        return self.transport.get(self.url(endpoint, **values))


def build_service(
    name: str,
    config: ServiceConfig,
    *,
    inner: Transport | None = None,
    cache: ResponseCache | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Service:
    """Assemble the polite transport stack for one service.

    A static bearer token is read from the environment variable named by
    ``config.token_env`` when set.
    """
    if inner is None:
        headers = {"User-Agent": "grilink/0.1 (metadata reconciliation)"}
        if config.token_env and os.environ.get(config.token_env):
            headers["Authorization"] = f"Bearer {os.environ[config.token_env]}"
        inner = HttpxTransport(timeout=config.timeout, headers=headers)
    transport = PoliteTransport(
        inner,
        name,
        rate=config.rate,
        max_in_flight=config.max_in_flight,
        retries=config.retries,
        backoff=config.backoff,
        backoff_ceiling=config.backoff_ceiling,
        cache=cache,
        sleep=sleep,
    )
    return Service(name, config, transport)
