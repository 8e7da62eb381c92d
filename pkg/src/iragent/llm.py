"""Chat-completion gateway: config, backends, retries, token budget, transcripts.

The library never talks to the network except through :class:`HttpBackend`.
Mock backends (:class:`ScriptedBackend` here, the nearest-neighbour responder in
:mod:`iragent.reasoning`) make every LLM-dependent stage testable offline.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .errors import (
    BudgetExceeded,
    ConfigError,
    LlmTimeout,
    ProviderError,
    RateLimited,
    TransportError,
)

ROLES = ("system", "user", "assistant")
EXTRACTION_TEMPERATURE = 0.1
REASONING_TEMPERATURE = 0.5


@dataclass(frozen=True)
class LlmConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    temperature: float = REASONING_TEMPERATURE
    max_tokens: int = 4096
    timeout: float = 120.0
    max_retries: int = 3
    context_limit: int = 32768
    budget_fraction: float = 0.8
    max_concurrency: int = 4

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ConfigError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if not 0 < self.budget_fraction <= 1:
            raise ConfigError("budget_fraction must lie in (0, 1]")

    @property
    def prompt_budget(self) -> int:
        """Token budget for a request's messages (conservative share of the context)."""
        return int(self.budget_fraction * self.context_limit)

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None

    @classmethod
    def from_env(cls, **overrides) -> "LlmConfig":
        env = {}
        if os.environ.get("LLM_BASE_URL"):
            env["base_url"] = os.environ["LLM_BASE_URL"]
        if os.environ.get("LLM_MODEL"):
            env["model"] = os.environ["LLM_MODEL"]
        return cls(**{**env, **overrides})

    def to_json(self) -> dict:
        return asdict(self)


def for_extraction(cfg: LlmConfig) -> LlmConfig:
    return replace(cfg, temperature=EXTRACTION_TEMPERATURE)


@dataclass
class ChatExchange:
    messages: list
    response: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0
    attempts: int = 1
    backend: str = ""
    tag: str = ""

    def to_json(self) -> dict:
        return {
            "messages": self.messages,
            "response": self.response,
            "usage": {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens},
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
            "backend": self.backend,
            "tag": self.tag,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChatExchange":
        usage = obj.get("usage", {})
        return cls(
            obj["messages"],
            obj["response"],
            usage.get("prompt_tokens", 0),
            usage.get("completion_tokens", 0),
            obj.get("latency_ms", 0.0),
            obj.get("attempts", 1),
            obj.get("backend", ""),
            obj.get("tag", ""),
        )


def validate_messages(messages: Sequence[Mapping]) -> list[dict]:
    if not messages:
        raise ValueError("messages must not be empty")
    out = []
    for k, m in enumerate(messages):
        role, content = m.get("role"), m.get("content")
        if role not in ROLES or not isinstance(content, str):
            raise ValueError(f"message {k} needs role in {ROLES} and string content")
        if role == "system" and k != 0:
            raise ValueError("a system message may only open the conversation")
        out.append({"role": role, "content": content})
    turns = [m["role"] for m in out if m["role"] != "system"]
    if not turns or turns[0] != "user" or turns[-1] != "user":
        raise ValueError("conversation must start and end with a user turn")
    if any(a == b for a, b in zip(turns, turns[1:])):
        raise ValueError("user and assistant turns must alternate")
    return out


def estimate_tokens(messages: Sequence[Mapping]) -> int:
    """ceil(characters / 4) plus 8 per message. Used for budget gating only."""
    if not messages:
        return 0
    chars = sum(len(m["content"]) for m in messages)
    return math.ceil(chars / 4) + 8 * len(messages)


def message_key(messages: Sequence[Mapping]) -> str:
    return json.dumps([[m["role"], m["content"]] for m in messages], ensure_ascii=False)


class LlmBackend(Protocol):
    name: str

    def send(self, messages: list[dict], cfg: LlmConfig) -> tuple[str, dict]:
        """Return ``(text, usage)``; raise TransportError/RateLimited/... on failure."""


class HttpBackend:
    """JSON chat-completion endpoint (``POST {base_url}/chat/completions``)."""

    name = "http"
    requests_sent = 0  # process-wide instrumentation counter
    _lock = threading.Lock()

    def __init__(self, client=None):
        self._client = client
        self._semaphores: dict[int, threading.Semaphore] = {}

    def _http(self, cfg: LlmConfig):
        import httpx

        if self._client is None:
            self._client = httpx.Client(timeout=cfg.timeout)
        return self._client

    @staticmethod
    def request_body(messages: list[dict], cfg: LlmConfig) -> dict:
        return {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }

    def send(self, messages, cfg):
        import httpx

        key = cfg.api_key()
        if not key:
            raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
        sem = self._semaphores.setdefault(cfg.max_concurrency, threading.Semaphore(cfg.max_concurrency))
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        with sem:
            with HttpBackend._lock:
                HttpBackend.requests_sent += 1
            try:
                resp = self._http(cfg).post(
                    url,
                    json=self.request_body(messages, cfg),
                    headers={"Authorization": f"Bearer {key}"},
                    timeout=cfg.timeout,
                )
            except httpx.TimeoutException as exc:
                raise LlmTimeout(str(exc)) from None
            except httpx.TransportError as exc:
                raise TransportError(str(exc)) from None
        if resp.status_code == 429:
            raise RateLimited(resp.text[:200])
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError(resp.status_code, resp.text) from None
        if not isinstance(text, str) or not text:
            raise ProviderError(resp.status_code, "empty completion")
        return text, dict(data.get("usage") or {})


class ScriptedBackend:
    """Canned responses keyed by the exact message list, with an optional
    ordered fallback queue for conversations not in the map."""

    name = "scripted"

    def __init__(self, responses: Mapping[str, str] | None = None, queue: Iterable[str] = ()):
        self.responses = dict(responses or {})
        self.queue = list(queue)
        self.calls: list[list[dict]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_transcript(cls, path) -> "ScriptedBackend":
        responses = {}
        for ex in read_transcript(path):
            responses[message_key(ex.messages)] = ex.response
        return cls(responses)

    def send(self, messages, cfg):
        with self._lock:
            self.calls.append(messages)
            key = message_key(messages)
            if key in self.responses:
                return self.responses[key], {}
            if self.queue:
                return self.queue.pop(0), {}
        raise ProviderError(404, "scripted backend has no response for this conversation")


class Transcript:
    """Append-only JSONL log of exchanges (kept in memory when ``path`` is None)."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.exchanges: list[ChatExchange] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.write_text("")

    def append(self, ex: ChatExchange) -> int:
        with self._lock:
            self.exchanges.append(ex)
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
            return len(self.exchanges) - 1

    def __len__(self):
        return len(self.exchanges)


def read_transcript(path) -> list[ChatExchange]:
    return [ChatExchange.from_json(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]


RETRYABLE = (TransportError, RateLimited, LlmTimeout)


def complete(cfg: LlmConfig, messages: Sequence[Mapping], backend: LlmBackend,
             transcript: Transcript | None = None, *, tag: str = "",
             sleep: Callable[[float], None] = time.sleep,
             rng: random.Random | None = None) -> ChatExchange:
    """Send one conversation and return the exchange.

    Transport failures, timeouts and rate limits are retried with exponential
    backoff (1 s, 2 s, 4 s, ... each scaled by a random factor in [0.5, 1.5])
    up to ``cfg.max_retries`` extra attempts. The budget check happens before
    any attempt.
    """
    msgs = validate_messages(messages)
    est = estimate_tokens(msgs)
    if est > cfg.prompt_budget:
        raise BudgetExceeded(est, cfg.prompt_budget)
    rng = rng or random.Random()
    attempt = 0
    while True:
        attempt += 1
        started = time.perf_counter()
        try:
            text, usage = backend.send(msgs, cfg)
            break
        except RETRYABLE as exc:
            if attempt > cfg.max_retries:
                if isinstance(exc, RateLimited):
                    raise RateLimited(f"still rate limited after {attempt} attempts") from exc
                raise
            sleep(2.0 ** (attempt - 1) * (0.5 + rng.random()))
    is_mock = getattr(backend, "name", "") != "http"
    ex = ChatExchange(
        msgs,
        text,
        int(usage.get("prompt_tokens", est)),
        int(usage.get("completion_tokens", math.ceil(len(text) / 4))),
        0.0 if is_mock else round((time.perf_counter() - started) * 1000, 3),
        attempt,
        getattr(backend, "name", type(backend).__name__),
        tag,
    )
    if transcript is not None:
        transcript.append(ex)
    return ex
