import json

import httpx
import pytest

from iragent.errors import (
    BudgetExceeded,
    ConfigError,
    ProviderError,
    RateLimited,
    TransportError,
)
from iragent.llm import (
    HttpBackend,
    LlmConfig,
    ScriptedBackend,
    Transcript,
    complete,
    estimate_tokens,
    for_extraction,
    message_key,
    read_transcript,
)

USER = [{"role": "user", "content": "hello"}]


class Flaky:
    """Fails ``n`` times with ``exc`` and then answers."""

    name = "flaky"

    def __init__(self, n, exc=TransportError):
        self.n, self.exc, self.calls = n, exc, 0

    def send(self, messages, cfg):
        self.calls += 1
        if self.calls <= self.n:
            raise self.exc("boom")
        return "ok", {}


class Exploding:
    name = "exploding"

    def send(self, messages, cfg):
        raise AssertionError("backend must not be reached")


def test_estimate_tokens_formula():
    assert estimate_tokens([]) == 0
    assert estimate_tokens([{"role": "user", "content": "x" * 400}]) == 108
    assert estimate_tokens([{"role": "user", "content": "x" * 401}]) == 109


def test_default_temperatures_and_budget():
    cfg = LlmConfig()
    assert cfg.temperature == 0.5
    assert for_extraction(cfg).temperature == 0.1
    assert cfg.prompt_budget == int(0.8 * 32768)
    with pytest.raises(ConfigError):
        LlmConfig(temperature=2.5)


def test_budget_checked_before_backend():
    cfg = LlmConfig(context_limit=100, budget_fraction=1.0)
    # 8 tokens of overhead + ceil(chars / 4): 368 chars -> 100, 369 -> 101
    assert complete(cfg, [{"role": "user", "content": "x" * 368}], ScriptedBackend(queue=["a"])).response == "a"
    with pytest.raises(BudgetExceeded):
        complete(cfg, [{"role": "user", "content": "x" * 369}], Exploding())


def test_retry_twice_then_success():
    sleeps = []
    backend = Flaky(2)
    ex = complete(LlmConfig(max_retries=3), USER, backend, sleep=sleeps.append)
    assert ex.response == "ok" and ex.attempts == 3 and backend.calls == 3
    assert len(sleeps) == 2
    assert 0.5 <= sleeps[0] <= 1.5 and 1.0 <= sleeps[1] <= 3.0


def test_retries_exhausted():
    with pytest.raises(RateLimited):
        complete(LlmConfig(max_retries=2), USER, Flaky(10, RateLimited), sleep=lambda s: None)


def test_provider_error_not_retried():
    backend = Flaky(1, lambda msg: ProviderError(400, msg))
    with pytest.raises(ProviderError):
        complete(LlmConfig(), USER, backend, sleep=lambda s: None)
    assert backend.calls == 1


def test_scripted_backend_is_deterministic():
    msgs = [{"role": "system", "content": "s"}, {"role": "user", "content": "q"}]
    backend = ScriptedBackend({message_key(msgs): "canned"})
    a = complete(LlmConfig(), msgs, backend)
    b = complete(LlmConfig(), msgs, backend)
    assert a.response == b.response == "canned"
    assert a.latency_ms == b.latency_ms == 0.0
    with pytest.raises(ProviderError):
        complete(LlmConfig(), USER, backend)


def test_message_validation():
    with pytest.raises(ValueError):
        complete(LlmConfig(), [], ScriptedBackend(queue=["x"]))
    bad = [{"role": "user", "content": "a"}, {"role": "user", "content": "b"}]
    with pytest.raises(ValueError):
        complete(LlmConfig(), bad, ScriptedBackend(queue=["x"]))


def test_transcript_replay(tmp_path):
    path = tmp_path / "t.jsonl"
    log = Transcript(path)
    live = ScriptedBackend(queue=["first", "second"])
    convs = [USER, [{"role": "user", "content": "again"}]]
    answers = [complete(LlmConfig(), m, live, log, tag="t").response for m in convs]
    assert len(read_transcript(path)) == 2
    replay = ScriptedBackend.from_transcript(path)
    assert [complete(LlmConfig(), m, replay).response for m in convs] == answers


# -- HTTP backend against an in-process transport ----------------------------------


def http_backend(handler):
    return HttpBackend(httpx.Client(transport=httpx.MockTransport(handler)))


def test_http_request_shape(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k123")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}],
                                         "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    cfg = LlmConfig(base_url="http://llm.test/v1", model="m1")
    ex = complete(cfg, USER, http_backend(handler))
    assert ex.response == "hi" and ex.prompt_tokens == 3
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k123"
    assert set(seen["body"]) == {"model", "messages", "temperature", "max_tokens"}


def test_http_rate_limit_then_success(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    replies = iter([httpx.Response(429, text="slow down"),
                    httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})])
    ex = complete(LlmConfig(base_url="http://llm.test"), USER,
                  http_backend(lambda r: next(replies)), sleep=lambda s: None)
    assert ex.attempts == 2


def test_http_client_error_and_missing_key(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    with pytest.raises(ProviderError) as err:
        complete(LlmConfig(base_url="http://llm.test"), USER,
                 http_backend(lambda r: httpx.Response(401, text="bad key")))
    assert err.value.status == 401
    monkeypatch.delenv("LLM_API_KEY")
    with pytest.raises(ConfigError):
        complete(LlmConfig(), USER, http_backend(lambda r: httpx.Response(200)))
