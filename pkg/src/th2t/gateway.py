"""Chat-completions gateway: HTTP transport, disk cache, retries, batching.

The gateway is shared across worker threads.  Responses are cached in an
append-only content-addressed store keyed by a digest of the full request,
so reruns over large corpora are resumable and byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .config import Config, EndpointConfig

logger = logging.getLogger(__name__)

ROLES = ("short_cot", "long_cot", "judge")

# one initial attempt plus a retry per backoff entry, on 5xx/timeouts only
RETRY_BACKOFF_SECONDS = (1.0, 4.0, 16.0)
MAX_TRIES = 1 + len(RETRY_BACKOFF_SECONDS)

_EMULATION_INSTRUCTION = (
    "Continue the assistant response that begins exactly with the following "
    "text. Do not repeat the text, just continue from it.\n\n{prefix}"
)


class GatewayError(Exception):
    """Request failed; ``attempts`` carries the per-attempt log."""

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class TransportRetryableError(Exception):
    """Transient failure (5xx, timeout, connection reset): safe to retry."""


class TransportFatalError(Exception):
    """Non-retryable failure such as an HTTP 4xx."""

    def __init__(self, message: str, prefix_rejected: bool = False):
        super().__init__(message)
        self.prefix_rejected = prefix_rejected


@dataclass(frozen=True)
class GenerationRequest:
    model_role: str
    system_prompt: str
    user_prompt: str
    assistant_prefix: str | None = None
    max_new_tokens: int = 8192
    decoding: str = "greedy"

    def __post_init__(self) -> None:
        if self.model_role not in ROLES:
            raise ValueError(f"unknown model role '{self.model_role}'")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if self.decoding != "greedy":
            raise ValueError("only greedy decoding is supported")


@dataclass
class GenerationResult:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    latency_seconds: float = 0.0
    reached_max_length: bool = False
    cache_hit: bool = False
    emulated_prefix: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class TransportReply:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    finish_reason: str | None = None
    latency_seconds: float | None = None


class Transport(Protocol):
    def complete(self, endpoint: EndpointConfig, request: GenerationRequest) -> TransportReply: ...


class HttpTransport:
    """OpenAI-style chat-completions over HTTP with assistant prefill."""

    def __init__(self, timeout: float = 300.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, endpoint: EndpointConfig, request: GenerationRequest) -> TransportReply:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        if request.assistant_prefix:
            messages.append({"role": "assistant", "content": request.assistant_prefix})
        payload = {
            "model": endpoint.model,
            "messages": messages,
            "max_tokens": request.max_new_tokens,
            "temperature": 0.0,
        }
        headers = {"Content-Type": "application/json"}
        api_key = endpoint.api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        started = time.monotonic()
        try:
            response = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransportRetryableError(f"{type(exc).__name__}: {exc}") from exc
        elapsed = time.monotonic() - started

        if response.status_code >= 500:
            raise TransportRetryableError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code >= 400:
            body = response.text[:500]
            rejected = request.assistant_prefix is not None and (
                "assistant" in body.lower() or "prefill" in body.lower() or response.status_code == 400
            )
            raise TransportFatalError(f"HTTP {response.status_code}: {body}", prefix_rejected=rejected)

        data = response.json()
        choice = data["choices"][0]
        text = choice.get("message", {}).get("content") or ""
        usage = data.get("usage") or {}
        return TransportReply(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
            finish_reason=choice.get("finish_reason"),
            latency_seconds=elapsed,
        )


@dataclass
class MockRule:
    """One canned response: matches when ``match`` occurs in the user prompt."""

    role: str
    match: str
    text: str
    completion_tokens: int | None = None
    reached_max_length: bool = False
    latency_seconds: float = 0.0


class MockTransport:
    """Fixture-backed transport for tests and --mock pipeline runs.

    Resolution order: explicit responder callable, then the first matching
    rule, then ``default_text``.  Every served request is appended to
    ``calls`` so tests can assert on traffic.
    """

    def __init__(
        self,
        rules: Sequence[MockRule] = (),
        responder: Callable[[GenerationRequest], TransportReply] | None = None,
        default_text: str | None = None,
    ):
        self.rules = list(rules)
        self.responder = responder
        self.default_text = default_text
        self.calls: list[GenerationRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "MockTransport":
        rules = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                rules.append(
                    MockRule(
                        role=record["role"],
                        match=record["match"],
                        text=record["text"],
                        completion_tokens=record.get("completion_tokens"),
                        reached_max_length=record.get("reached_max_length", False),
                        latency_seconds=record.get("latency_seconds", 0.0),
                    )
                )
        return cls(rules=rules)

    def complete(self, endpoint: EndpointConfig, request: GenerationRequest) -> TransportReply:
        with self._lock:
            self.calls.append(request)
        if self.responder is not None:
            return self.responder(request)
        for rule in self.rules:
            if rule.role == request.model_role and rule.match in request.user_prompt:
                finish = "length" if rule.reached_max_length else "stop"
                return TransportReply(
                    text=rule.text,
                    completion_tokens=rule.completion_tokens,
                    finish_reason=finish,
                    latency_seconds=rule.latency_seconds,
                )
        if self.default_text is not None:
            return TransportReply(text=self.default_text, latency_seconds=0.0)
        raise TransportFatalError(
            f"no mock fixture for role={request.model_role} prompt={request.user_prompt[:80]!r}"
        )


class ResponseCache:
    """Append-only content-addressed store: one JSON file per request digest."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            logger.warning("unreadable cache entry %s; ignoring", path)
            return None

    def put(self, key: str, entry: dict) -> None:
        path = self._path(key)
        if path.exists():
            return
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(json.dumps(entry, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)


def request_digest(endpoint: EndpointConfig, request: GenerationRequest) -> str:
    """Stable cache key over endpoint identity and every prompt field."""
    canonical = json.dumps(
        {
            "base_url": endpoint.base_url,
            "model": endpoint.model,
            "model_role": request.model_role,
            "system_prompt": request.system_prompt,
            "user_prompt": request.user_prompt,
            "assistant_prefix": request.assistant_prefix,
            "max_new_tokens": request.max_new_tokens,
            "decoding": request.decoding,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Gateway:
    """Routes generation requests to per-role endpoints with cache and retries."""

    def __init__(
        self,
        endpoints: dict[str, EndpointConfig],
        transport: Transport | None = None,
        cache_dir: str | Path | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.endpoints = endpoints
        self.transport = transport or HttpTransport()
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.sleeper = sleeper

    @classmethod
    def from_config(
        cls,
        config: Config,
        cache_dir: str | Path | None = None,
        mock: bool = False,
    ) -> "Gateway":
        if mock:
            if not config.mock_responses:
                raise GatewayError("mock mode requires 'mock_responses' in the config")
            transport: Transport = MockTransport.from_jsonl(config.mock_responses)
            endpoints = {role: EndpointConfig(base_url="mock://local", model=role) for role in ROLES}
            endpoints.update(config.endpoints)
            return cls(endpoints=endpoints, transport=transport, cache_dir=cache_dir)
        return cls(endpoints=config.endpoints, cache_dir=cache_dir)

    def _endpoint(self, role: str) -> EndpointConfig:
        try:
            return self.endpoints[role]
        except KeyError:
            raise GatewayError(f"no endpoint configured for model role '{role}'") from None

    def _issue(
        self, endpoint: EndpointConfig, request: GenerationRequest
    ) -> tuple[TransportReply, bool]:
        """Transport call with retry/backoff; falls back to prompt emulation
        when the provider rejects assistant prefill."""
        attempts: list[str] = []
        current = request
        emulated = False
        failures = 0
        while True:
            try:
                return self.transport.complete(endpoint, current), emulated
            except TransportFatalError as exc:
                if current.assistant_prefix and exc.prefix_rejected and not emulated:
                    attempts.append(f"prefill rejected, emulating: {exc}")
                    current = _emulate_prefix(current)
                    emulated = True
                    continue
                raise GatewayError(f"non-retryable failure: {exc}", attempts=attempts) from exc
            except TransportRetryableError as exc:
                failures += 1
                attempts.append(f"attempt {failures}: {exc}")
                if failures >= MAX_TRIES:
                    raise GatewayError(
                        f"request failed after {MAX_TRIES} attempts: {exc}", attempts=attempts
                    ) from exc
                self.sleeper(RETRY_BACKOFF_SECONDS[failures - 1])

    def generate(self, request: GenerationRequest, refresh: bool = False) -> GenerationResult:
        """Run one request, consulting and populating the cache.

        ``refresh`` skips the cache read (the entry is still written if new);
        the judge retry path uses it to force a fresh completion.
        """
        endpoint = self._endpoint(request.model_role)
        key = request_digest(endpoint, request)
        if self.cache is not None and not refresh:
            entry = self.cache.get(key)
            if entry is not None:
                return GenerationResult(cache_hit=True, **entry)

        reply, emulated = self._issue(endpoint, request)

        text = reply.text
        if request.assistant_prefix and text.startswith(request.assistant_prefix):
            # defensive: some providers echo the prefill
            text = text[len(request.assistant_prefix):]
        reached_max = reply.finish_reason == "length" or (
            reply.completion_tokens is not None and reply.completion_tokens == request.max_new_tokens
        )
        entry = {
            "text": text,
            "prompt_tokens": reply.prompt_tokens,
            "completion_tokens": reply.completion_tokens,
            "latency_seconds": reply.latency_seconds if reply.latency_seconds is not None else 0.0,
            "reached_max_length": reached_max,
            "emulated_prefix": emulated,
        }
        if self.cache is not None:
            self.cache.put(key, entry)
        return GenerationResult(cache_hit=False, **entry)

    def generate_with_prefix(self, request: GenerationRequest, prefix: str) -> GenerationResult:
        """Continue from an assistant turn that already contains ``prefix``.

        The returned text excludes the prefix; the full response is
        ``prefix + text``.  Providers that reject assistant prefill are
        handled by prompt-template emulation and the result is flagged.
        """
        if not prefix:
            raise ValueError("prefix must be non-empty")
        return self.generate(replace(request, assistant_prefix=prefix))

    def collect_batch(
        self, requests_: Sequence[GenerationRequest], parallelism: int
    ) -> list[GenerationResult]:
        """Run requests with bounded concurrency, preserving input order.

        Individual failures never abort the batch; they come back as results
        with ``error`` set.
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")

        def run_one(request: GenerationRequest) -> GenerationResult:
            try:
                return self.generate(request)
            except (GatewayError, TransportFatalError, ValueError) as exc:
                return GenerationResult(text="", error=str(exc))

        if parallelism == 1 or len(requests_) <= 1:
            return [run_one(r) for r in requests_]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(run_one, requests_))


def _emulate_prefix(request: GenerationRequest) -> GenerationRequest:
    instruction = _EMULATION_INSTRUCTION.format(prefix=request.assistant_prefix)
    return replace(
        request,
        user_prompt=f"{request.user_prompt}\n\n{instruction}",
        assistant_prefix=None,
    )
