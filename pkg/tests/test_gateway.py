"""Gateway: caching, retries, cost accounting, in-flight caps, registries."""

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from hayrick.gateway import (
    ContextOverflowError,
    EmbedProvider,
    Endpoint,
    GatewayError,
    HttpTransport,
    ModelGateway,
    RerankProvider,
    TransportError,
    UsageRecord,
    load_endpoints,
)


def endpoint(**overrides):
    base = dict(
        name="gen-1",
        capability="generate",
        base_url="http://example.invalid",
        auth_ref="",
        price_per_1k_input=5.0,
        price_per_1k_output=15.0,
        max_context_tokens=1000,
        max_in_flight=2,
    )
    base.update(overrides)
    return Endpoint(**base)


class EchoTransport:
    """Deterministic transport: replies with a digest of the prompt."""

    def __init__(self, latency=0.0):
        self.latency = latency
        self.calls = 0
        self.lock = threading.Lock()

    def send(self, ep, payload):
        with self.lock:
            self.calls += 1
        if self.latency:
            time.sleep(self.latency)
        if payload["capability"] == "generate":
            prompt = payload["prompt"]
            return {
                "text": f"echo:{hash(prompt) & 0xFFFF}",
                "input_tokens": 1000,
                "output_tokens": 500,
            }
        if payload["capability"] == "embed":
            return {"vectors": [[1.0, 0.0] for _ in payload["texts"]], "input_tokens": 10, "output_tokens": 0}
        return {"scores": [float(len(t)) for t in payload["texts"]], "input_tokens": 10, "output_tokens": 0}


def make_gateway(transport=None, tmp_path=None, **kwargs):
    kwargs.setdefault("backoff_base", 0.0)
    kwargs.setdefault("sleep", lambda s: None)
    return ModelGateway(transport or EchoTransport(), cache_dir=tmp_path, **kwargs)


# ---------------------------------------------------------------------------
# generate


def test_generate_cost_arithmetic():
    gateway = make_gateway()
    _, usage = gateway.generate(endpoint(), "hello world", {"temperature": 0})
    # Oracle: 1000/1000 * 5 + 500/1000 * 15 = 12.5
    assert usage.cost == pytest.approx(12.5)
    assert gateway.total_cost() == pytest.approx(12.5)


def test_generate_cache_miss_then_hit(tmp_path):
    transport = EchoTransport()
    gateway = make_gateway(transport, tmp_path)
    text1, usage1 = gateway.generate(endpoint(), "same prompt", {"temperature": 0})
    text2, usage2 = gateway.generate(endpoint(), "same prompt", {"temperature": 0})
    assert text1 == text2
    assert not usage1.cache_hit and usage2.cache_hit
    assert usage2.cost == 0.0
    assert transport.calls == 1
    assert gateway.total_cost() == pytest.approx(12.5)  # cached rerun adds nothing


def test_sampling_without_seed_is_not_cached(tmp_path):
    transport = EchoTransport()
    gateway = make_gateway(transport, tmp_path)
    gateway.generate(endpoint(), "p", {"temperature": 0.7})
    gateway.generate(endpoint(), "p", {"temperature": 0.7})
    assert transport.calls == 2
    gateway.generate(endpoint(), "p", {"temperature": 0.7, "seed": 11})
    gateway.generate(endpoint(), "p", {"temperature": 0.7, "seed": 11})
    assert transport.calls == 3  # seeded sampling is cacheable


def test_oversized_prompt_rejected_preflight():
    transport = EchoTransport()
    gateway = make_gateway(transport)
    with pytest.raises(ContextOverflowError):
        gateway.generate(endpoint(max_context_tokens=10), "word " * 100, {})
    assert transport.calls == 0
    assert gateway.total_cost() == 0.0  # zero cost on pre-flight rejection


def test_retry_backoff_then_success():
    class FlakyTransport:
        calls = 0

        def send(self, ep, payload):
            self.calls += 1
            if self.calls < 3:
                raise TransportError("boom")
            return {"text": "echo:ok", "input_tokens": 1, "output_tokens": 1}

    sleeps = []
    transport = FlakyTransport()
    gateway = ModelGateway(transport, max_attempts=3, backoff_base=0.25, sleep=sleeps.append)
    text, _ = gateway.generate(endpoint(), "p", {})
    assert text.startswith("echo:")
    assert transport.calls == 3
    assert sleeps == [0.25, 0.5]  # exponential backoff


def test_exhausted_retries_raise_gateway_error():
    class DeadTransport:
        def send(self, ep, payload):
            raise TransportError("always down")

    gateway = make_gateway(DeadTransport())
    with pytest.raises(GatewayError):
        gateway.generate(endpoint(), "p", {})


# ---------------------------------------------------------------------------
# embed / rerank


def test_embed_returns_one_vector_per_text():
    gateway = make_gateway()
    vectors, _ = gateway.embed(endpoint(capability="embed"), ["a", "b", "c"])
    assert len(vectors) == 3
    assert all(len(v) == 2 for v in vectors)


def test_embed_rejects_empty_batch_and_ragged_dimensions():
    gateway = make_gateway()
    with pytest.raises(GatewayError):
        gateway.embed(endpoint(capability="embed"), [])

    class Ragged:
        def send(self, ep, payload):
            return {"vectors": [[1.0], [1.0, 2.0]]}

    gateway = make_gateway(Ragged())
    with pytest.raises(GatewayError):
        gateway.embed(endpoint(capability="embed"), ["a", "b"])


def test_rerank_scores_align_with_inputs():
    gateway = make_gateway()
    scores, _ = gateway.rerank(endpoint(capability="rerank"), "q", ["xx", "yyyy", "z"])
    assert scores == [2.0, 4.0, 1.0]


def test_rerank_count_mismatch_is_gateway_error():
    class Short:
        def send(self, ep, payload):
            return {"scores": [1.0]}

    gateway = make_gateway(Short())
    with pytest.raises(GatewayError):
        gateway.rerank(endpoint(capability="rerank"), "q", ["a", "b"])


def test_provider_adapters_wrap_gateway():
    gateway = make_gateway()
    embed = EmbedProvider(gateway, endpoint(capability="embed"))
    assert embed.embed(["a"]) == [[1.0, 0.0]]
    rerank = RerankProvider(gateway, endpoint(capability="rerank"))
    assert rerank.rerank("q", ["ab"]) == [2.0]


# ---------------------------------------------------------------------------
# Concurrency


def test_in_flight_never_exceeds_cap():
    transport = EchoTransport(latency=0.01)
    gateway = make_gateway(transport)
    ep = endpoint(max_in_flight=3)
    prompts = [f"prompt {k}" for k in range(24)]
    with ThreadPoolExecutor(max_workers=12) as pool:
        list(pool.map(lambda p: gateway.generate(ep, p, {}), prompts))
    assert 1 <= gateway.peak_in_flight(ep.name) <= 3
    assert transport.calls == 24


def test_concurrent_identical_requests_single_flight(tmp_path):
    transport = EchoTransport(latency=0.02)
    gateway = make_gateway(transport, tmp_path)
    ep = endpoint(max_in_flight=8)
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda _: gateway.generate(ep, "dup", {"temperature": 0}), range(8)))
    texts = {text for text, _ in results}
    assert len(texts) == 1
    assert transport.calls == 1  # duplicates awaited the first call
    hits = sum(1 for _, usage in results if usage.cache_hit)
    assert hits == 7


def test_usage_log_thread_safe_total():
    transport = EchoTransport()
    gateway = make_gateway(transport)
    ep = endpoint()
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(lambda k: gateway.generate(ep, f"p{k}", {}), range(40)))
    assert len(gateway.usage_log) == 40
    assert gateway.total_cost() == pytest.approx(40 * 12.5)


# ---------------------------------------------------------------------------
# Registry and validation


def test_endpoint_registry_roundtrip(tmp_path):
    registry = {
        "endpoints": [
            {
                "name": "judge-main",
                "capability": "judge",
                "base_url": "http://localhost:9",
                "auth_ref": "JUDGE_KEY",
                "price_per_1k_input": 2.5,
                "price_per_1k_output": 10.0,
                "max_context_tokens": 128000,
                "max_in_flight": 4,
            },
            {"name": "embed-small", "capability": "embed"},
        ]
    }
    path = tmp_path / "endpoints.json"
    path.write_text(json.dumps(registry))
    loaded = load_endpoints(path)
    assert set(loaded) == {"judge-main", "embed-small"}
    assert loaded["judge-main"].auth_ref == "JUDGE_KEY"
    assert loaded["embed-small"].max_in_flight == 4


def test_endpoint_field_validation():
    with pytest.raises(GatewayError):
        Endpoint(name="x", capability="teleport")
    with pytest.raises(GatewayError):
        Endpoint(name="x", capability="generate", price_per_1k_input=-1)
    with pytest.raises(GatewayError):
        Endpoint(name="x", capability="generate", max_in_flight=0)


def test_usage_record_serializes():
    record = UsageRecord(endpoint="e", input_tokens=10, output_tokens=5, cost=0.1)
    raw = record.to_dict()
    assert raw["endpoint"] == "e" and raw["cost"] == 0.1


def test_gateway_text_generator_routes_stages():
    from hayrick.gateway import GatewayTextGenerator

    class TaggingTransport:
        def send(self, ep, payload):
            return {"text": f"{ep.name}:{payload['params'].get('temperature')}", "input_tokens": 1, "output_tokens": 1}

    gateway = make_gateway(TaggingTransport())
    default = endpoint(name="gen-default")
    strong = endpoint(name="gen-strong")
    generator = GatewayTextGenerator(
        gateway, {"default": default, "document_check": strong}, params={"temperature": 0}
    )
    assert generator.generate("p", "insights") == "gen-default:0"
    assert generator.generate("p", "document_check") == "gen-strong:0"
    with pytest.raises(GatewayError):
        GatewayTextGenerator(gateway, {"insights": default})


def test_http_transport_against_local_server():
    import http.server

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers["Content-Length"])
            payload = json.loads(self.rfile.read(length))
            reply = {"text": f"pong:{payload['prompt']}", "input_tokens": 3, "output_tokens": 2}
            body = json.dumps(reply).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        ep = endpoint(base_url=f"http://127.0.0.1:{server.server_port}/")
        gateway = ModelGateway(HttpTransport(timeout=5))
        text, usage = gateway.generate(ep, "ping", {})
        assert text == "pong:ping"
        assert usage.cost == pytest.approx(3 / 1000 * 5 + 2 / 1000 * 15)
    finally:
        server.shutdown()
