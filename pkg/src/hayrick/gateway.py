"""Provider-agnostic access to generate/embed/rerank endpoints.

One gateway instance fronts every remote call in a run: it enforces a
per-endpoint in-flight cap, retries transport failures with exponential
backoff, serves repeated requests from an on-disk cache (single-flight for
concurrent duplicates), and accounts cost per call so a run's dollar total
is always the sum of its usage records.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .core import DEFAULT_TOKEN_COUNTER, HayrickError, get_token_counter

logger = logging.getLogger(__name__)

CAPABILITIES = ("generate", "embed", "rerank", "judge")


class GatewayError(HayrickError):
    """Endpoint could not produce a usable response."""


class ContextOverflowError(GatewayError):
    """Prompt exceeds the endpoint's context window; rejected pre-flight."""


class TransportError(GatewayError):
    """Retryable transport-level failure."""


@dataclass(frozen=True)
class Endpoint:
    name: str
    capability: str  # one of CAPABILITIES
    base_url: str = ""
    auth_ref: str = ""  # env var holding the credential; never the credential itself
    price_per_1k_input: float = 0.0
    price_per_1k_output: float = 0.0
    max_context_tokens: int = 128000
    max_in_flight: int = 4

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise GatewayError(f"endpoint {self.name!r}: unknown capability {self.capability!r}")
        if self.price_per_1k_input < 0 or self.price_per_1k_output < 0:
            raise GatewayError(f"endpoint {self.name!r}: prices must be >= 0")
        if self.max_in_flight < 1:
            raise GatewayError(f"endpoint {self.name!r}: max_in_flight must be >= 1")


@dataclass
class UsageRecord:
    endpoint: str
    input_tokens: int = 0
    output_tokens: int = 0
    cost: float = 0.0
    cache_hit: bool = False
    latency_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "cost": self.cost,
            "cache_hit": self.cache_hit,
            "latency_ms": self.latency_ms,
        }


def load_endpoints(path) -> dict[str, Endpoint]:
    """Read an endpoint registry file: {"endpoints": [{name, capability, ...}]}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    registry = {}
    for entry in raw.get("endpoints", []):
        ep = Endpoint(**entry)
        registry[ep.name] = ep
    return registry


class HttpTransport:
    """Minimal JSON-over-HTTP transport: POST the payload to the endpoint's
    base_url with a bearer credential read from the endpoint's env var."""

    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout

    def send(self, endpoint: Endpoint, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_ref:
            credential = os.environ.get(endpoint.auth_ref, "")
            if credential:
                headers["Authorization"] = f"Bearer {credential}"
        request = urllib.request.Request(
            endpoint.base_url,
            data=json.dumps(payload).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                body = response.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{endpoint.name}: {exc}") from exc
        try:
            return json.loads(body)
        except json.JSONDecodeError as exc:
            raise TransportError(f"{endpoint.name}: non-JSON response") from exc


class _EndpointGate:
    """Semaphore plus an instrumentation counter for one endpoint."""

    def __init__(self, limit: int):
        self.semaphore = threading.Semaphore(limit)
        self.lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0

    def __enter__(self):
        self.semaphore.acquire()
        with self.lock:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        return self

    def __exit__(self, *exc):
        with self.lock:
            self.in_flight -= 1
        self.semaphore.release()
        return False


class ModelGateway:
    """Thread-safe front for all endpoint calls."""

    def __init__(
        self,
        transport,
        cache_dir: str | Path | None = None,
        token_counter: str = DEFAULT_TOKEN_COUNTER,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.count_tokens = get_token_counter(token_counter)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.usage_log: list[UsageRecord] = []
        self._usage_lock = threading.Lock()
        self._gates: dict[str, _EndpointGate] = {}
        self._gates_lock = threading.Lock()
        self._inflight_keys: dict[str, threading.Event] = {}
        self._inflight_lock = threading.Lock()

    # -- public operations ---------------------------------------------------

    def generate(self, endpoint: Endpoint, prompt: str, params: dict | None = None) -> tuple[str, UsageRecord]:
        params = dict(params or {})
        estimate = self.count_tokens(prompt)
        if estimate > endpoint.max_context_tokens:
            raise ContextOverflowError(
                f"{endpoint.name}: prompt of ~{estimate} tokens exceeds "
                f"max_context_tokens={endpoint.max_context_tokens}"
            )
        payload = {"capability": "generate", "prompt": prompt, "params": params}
        cacheable = params.get("temperature", 0) == 0 or params.get("seed") is not None
        response, usage = self._call(endpoint, payload, cacheable)
        text = response.get("text")
        if not isinstance(text, str):
            raise GatewayError(f"{endpoint.name}: generate response missing 'text'")
        return text, usage

    def embed(self, endpoint: Endpoint, texts: Sequence[str]) -> tuple[list[list[float]], UsageRecord]:
        if not texts:
            raise GatewayError(f"{endpoint.name}: embed requires at least one text")
        payload = {"capability": "embed", "texts": list(texts)}
        response, usage = self._call(endpoint, payload, cacheable=True)
        vectors = response.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise GatewayError(f"{endpoint.name}: expected {len(texts)} vectors")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise GatewayError(f"{endpoint.name}: embedding dimensions differ across batch: {sorted(dims)}")
        return vectors, usage

    def rerank(self, endpoint: Endpoint, query: str, texts: Sequence[str]) -> tuple[list[float], UsageRecord]:
        if not texts:
            raise GatewayError(f"{endpoint.name}: rerank requires at least one text")
        payload = {"capability": "rerank", "query": query, "texts": list(texts)}
        response, usage = self._call(endpoint, payload, cacheable=True)
        scores = response.get("scores")
        if not isinstance(scores, list) or len(scores) != len(texts):
            raise GatewayError(f"{endpoint.name}: expected {len(texts)} scores aligned with inputs")
        return [float(s) for s in scores], usage

    def total_cost(self) -> float:
        with self._usage_lock:
            return sum(record.cost for record in self.usage_log)

    def peak_in_flight(self, endpoint_name: str) -> int:
        gate = self._gates.get(endpoint_name)
        return gate.peak_in_flight if gate else 0

    # -- internals -----------------------------------------------------------

    def _gate(self, endpoint: Endpoint) -> _EndpointGate:
        with self._gates_lock:
            gate = self._gates.get(endpoint.name)
            if gate is None:
                gate = self._gates[endpoint.name] = _EndpointGate(endpoint.max_in_flight)
            return gate

    def _cache_key(self, endpoint: Endpoint, payload: dict) -> str:
        canonical = json.dumps(
            {"endpoint": endpoint.name, "payload": payload}, sort_keys=True, ensure_ascii=False
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _call(self, endpoint: Endpoint, payload: dict, cacheable: bool) -> tuple[dict, UsageRecord]:
        cacheable = cacheable and self.cache_dir is not None
        key = self._cache_key(endpoint, payload) if cacheable else ""

        while True:
            if cacheable:
                cached = self._cache_read(key)
                if cached is not None:
                    usage = UsageRecord(endpoint=endpoint.name, cache_hit=True)
                    usage.input_tokens = cached.get("_usage", {}).get("input_tokens", 0)
                    usage.output_tokens = cached.get("_usage", {}).get("output_tokens", 0)
                    self._record(usage)
                    return cached["response"], usage
                leader = self._claim(key)
                if not leader:
                    continue  # another thread is computing this key; re-check cache
            try:
                response, usage = self._transport_call(endpoint, payload)
                if cacheable:
                    self._cache_write(key, response, usage)
            finally:
                if cacheable:
                    self._release(key)
            self._record(usage)
            return response, usage

    def _claim(self, key: str) -> bool:
        """Single-flight: return True if this thread should compute the key,
        otherwise wait for the current leader and return False."""
        with self._inflight_lock:
            event = self._inflight_keys.get(key)
            if event is None:
                self._inflight_keys[key] = threading.Event()
                return True
        event.wait()
        return False

    def _release(self, key: str) -> None:
        with self._inflight_lock:
            event = self._inflight_keys.pop(key, None)
        if event is not None:
            event.set()

    def _cache_read(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None

    def _cache_write(self, key: str, response: dict, usage: UsageRecord) -> None:
        path = self._cache_path(key)
        tmp = path.with_suffix(".tmp")
        body = {
            "response": response,
            "_usage": {"input_tokens": usage.input_tokens, "output_tokens": usage.output_tokens},
        }
        tmp.write_text(json.dumps(body, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)

    def _transport_call(self, endpoint: Endpoint, payload: dict) -> tuple[dict, UsageRecord]:
        gate = self._gate(endpoint)
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            start = time.monotonic()
            try:
                with gate:
                    response = self.transport.send(endpoint, payload)
                elapsed_ms = int((time.monotonic() - start) * 1000)
                input_tokens = int(response.get("input_tokens", 0))
                output_tokens = int(response.get("output_tokens", 0))
                usage = UsageRecord(
                    endpoint=endpoint.name,
                    input_tokens=input_tokens,
                    output_tokens=output_tokens,
                    cost=input_tokens / 1000 * endpoint.price_per_1k_input
                    + output_tokens / 1000 * endpoint.price_per_1k_output,
                    cache_hit=False,
                    latency_ms=elapsed_ms,
                )
                return response, usage
            except TransportError as exc:
                last_error = exc
                if attempt < self.max_attempts:
                    delay = self.backoff_base * (2 ** (attempt - 1))
                    logger.warning("%s attempt %d failed (%s); retrying in %.2fs", endpoint.name, attempt, exc, delay)
                    self.sleep(delay)
        raise GatewayError(f"{endpoint.name}: exhausted {self.max_attempts} attempts: {last_error}")

    def _record(self, usage: UsageRecord) -> None:
        with self._usage_lock:
            self.usage_log.append(usage)


# ---------------------------------------------------------------------------
# Provider adapters used by the retrieval module


class EmbedProvider:
    def __init__(self, gateway: ModelGateway, endpoint: Endpoint):
        self.gateway = gateway
        self.endpoint = endpoint

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors, _ = self.gateway.embed(self.endpoint, texts)
        return vectors


class RerankProvider:
    def __init__(self, gateway: ModelGateway, endpoint: Endpoint):
        self.gateway = gateway
        self.endpoint = endpoint

    def rerank(self, query: str, texts: Sequence[str]) -> list[float]:
        scores, _ = self.gateway.rerank(self.endpoint, query, texts)
        return scores


class GatewayTextGenerator:
    """Synthesis-facing text generator: routes each pipeline stage to a
    configured endpoint (falling back to "default")."""

    def __init__(self, gateway: ModelGateway, endpoints_by_stage: dict[str, Endpoint], params: dict | None = None):
        if "default" not in endpoints_by_stage:
            raise GatewayError("endpoints_by_stage needs a 'default' entry")
        self.gateway = gateway
        self.endpoints_by_stage = dict(endpoints_by_stage)
        self.params = dict(params or {})

    def generate(self, prompt: str, stage: str) -> str:
        endpoint = self.endpoints_by_stage.get(stage, self.endpoints_by_stage["default"])
        text, _ = self.gateway.generate(endpoint, prompt, self.params)
        return text
