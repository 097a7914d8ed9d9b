"""Provider-agnostic chat-completion gateway.

Two providers ship: an OpenAI-style HTTP chat-completions client and a
scripted mock that replays an ordered list of ``{expect_substring,
response_text}`` records, which is what the whole test suite runs on.
"""
from __future__ import annotations

import json
import logging
import os
import re
import socket
import string
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (ExtractionError, ProviderError, ProviderTimeoutError, ScriptedMockError,
                     TemplateError, TransportError, TransportTimeout)

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_bindings: frozenset = frozenset()

    def __post_init__(self):
        if not self.required_bindings:
            object.__setattr__(self, "required_bindings", frozenset(placeholders(self.body)))


def placeholders(body: str) -> list[str]:
    """Named ``{placeholders}`` in ``body``; ``{{`` and ``}}`` are literal braces."""
    try:
        return [name for _, name, _, _ in string.Formatter().parse(body) if name is not None]
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from exc


def render_template(template: PromptTemplate, bindings: dict) -> str:
    missing = sorted(set(template.required_bindings) - set(bindings))
    if missing:
        raise TemplateError(f"template {template.template_id}: missing binding(s) "
                            + ", ".join(missing))
    used = set(placeholders(template.body))
    extra = sorted(set(bindings) - used)
    if extra:
        log.warning("template %s: ignoring extra bindings %s", template.template_id, extra)
    values = {k: bindings[k] for k in used}
    out = []
    for literal, name, spec, conv in string.Formatter().parse(template.body):
        out.append(literal)
        if name is not None:
            if spec or conv:
                raise TemplateError(f"placeholder {{{name}}} may not carry a format spec")
            out.append(str(values[name]))
    return "".join(out)


# ---------------------------------------------------------------------------
# fenced code extraction
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"^[ \t]*```(.*)$")


def extract_fenced_code(response: str, language_tag: str | None = None) -> str:
    """Contents of the first triple-backtick fence (matching ``language_tag`` if given).

    Interior bytes are returned untouched, including the final newline.
    """
    lines = response.splitlines(keepends=True)
    i = 0
    while i < len(lines):
        m = _FENCE.match(lines[i].rstrip("\r\n"))
        if not m:
            i += 1
            continue
        info = m.group(1).strip()
        start = i + 1
        j = start
        while j < len(lines) and lines[j].rstrip("\r\n").strip() != "```":
            j += 1
        if j == len(lines):
            raise ExtractionError(f"unterminated code fence opened at line {i + 1}")
        tag = info.split()[0].lower() if info else ""
        if language_tag is None or tag == language_tag.lower():
            return "".join(lines[start:j])
        i = j + 1
    if language_tag:
        raise ExtractionError(f"no ```{language_tag} fence in model response")
    raise ExtractionError("no code fence in model response")


def extract_all_fences(response: str) -> list[tuple[str, str]]:
    """Every fence as (info tag, body) in order of appearance."""
    out = []
    lines = response.splitlines(keepends=True)
    i = 0
    while i < len(lines):
        m = _FENCE.match(lines[i].rstrip("\r\n"))
        if not m:
            i += 1
            continue
        j = i + 1
        while j < len(lines) and lines[j].rstrip("\r\n").strip() != "```":
            j += 1
        if j == len(lines):
            raise ExtractionError(f"unterminated code fence opened at line {i + 1}")
        info = m.group(1).strip()
        out.append((info.split()[0].lower() if info else "", "".join(lines[i + 1:j])))
        i = j + 1
    return out


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

@dataclass
class ProviderConfig:
    endpoint: str
    model_name: str = "mock"
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = 3
    timeout: float = 120.0
    api_key_env: str = "LLM_API_KEY"
    requests_per_minute: float | None = None
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def is_mock(self) -> bool:
        return self.endpoint.startswith("mock:")


@dataclass
class ChatExchange:
    prompt: str
    response: str
    provider_id: str
    latency: float
    model_name: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    attempts: int = 1
    token_counts: dict | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


class TokenBucket:
    """Requests-per-minute limiter shared by all callers of one provider."""

    def __init__(self, per_minute: float | None, clock=time.monotonic, sleep=time.sleep):
        self.rate = per_minute / 60.0 if per_minute else None
        self.capacity = max(1.0, per_minute or 1.0)
        self.tokens = self.capacity
        self.clock, self.sleep = clock, sleep
        self.t = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate is None:
            return
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.t) * self.rate)
                self.t = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


class ScriptedMock:
    """Replays scripted responses.

    Each call consumes the earliest unconsumed record whose ``expect_substring``
    occurs in the prompt. Records may carry ``error`` ("transport" or "timeout")
    to script a failed attempt and ``repeat`` to stand for N identical records.
    With ``state_path`` set, consumption survives process restarts.
    """

    provider_id = "scripted-mock"

    def __init__(self, records, state_path=None, name="script"):
        self.records = []
        for rec in records:
            unknown = set(rec) - {"expect_substring", "response_text", "error", "repeat", "note"}
            if unknown:
                raise ScriptedMockError(f"{name}: unknown record fields {sorted(unknown)}")
            for _ in range(int(rec.get("repeat", 1))):
                self.records.append(rec)
        self.name = name
        self.state_path = Path(state_path) if state_path else None
        self.consumed: list[int] = []
        if self.state_path and self.state_path.exists():
            self.consumed = json.loads(self.state_path.read_text())["consumed"]
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path, state_path=None) -> "ScriptedMock":
        path = Path(path)
        records = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ScriptedMockError(f"{path}:{n}: {exc}") from exc
        return cls(records, state_path, name=path.name)

    @property
    def remaining(self) -> int:
        return len(self.records) - len(self.consumed)

    def send(self, prompt: str, config: ProviderConfig) -> str:
        with self._lock:
            self.calls.append(prompt)
            taken = set(self.consumed)
            for i, rec in enumerate(self.records):
                if i in taken:
                    continue
                if rec.get("expect_substring", "") in prompt:
                    break
            else:
                head = prompt[:120].replace("\n", " ")
                raise ScriptedMockError(
                    f"{self.name}: no unconsumed record matches prompt starting {head!r}")
            self.consumed.append(i)
            if self.state_path:
                from .workspace import atomic_write
                atomic_write(self.state_path, json.dumps({"consumed": self.consumed}).encode())
        err = rec.get("error")
        if err == "timeout":
            raise TransportTimeout(f"scripted timeout (record {i})")
        if err:
            raise TransportError(f"scripted transport failure (record {i})")
        return rec["response_text"]


class HttpChatProvider:
    """POSTs an OpenAI-style chat-completions request to ``config.endpoint``."""

    provider_id = "http-chat"

    def send(self, prompt: str, config: ProviderConfig) -> str:
        body = json.dumps({
            "model": config.model_name,
            "temperature": config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(config.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=config.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransportError(f"HTTP {exc.code}") from exc
            raise ProviderError(f"HTTP {exc.code}: {exc.read()[:200]!r}") from exc
        except (socket.timeout, TimeoutError) as exc:
            raise TransportTimeout(f"no response within {config.timeout}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise TransportTimeout(f"no response within {config.timeout}s") from exc
            raise TransportError(str(exc.reason)) from exc
        except (ConnectionError, json.JSONDecodeError) as exc:
            raise TransportError(str(exc)) from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {str(payload)[:200]}") from exc


class Gateway:
    """A provider plus its config, rate limiter and retry policy."""

    def __init__(self, config: ProviderConfig, provider=None, sleep=time.sleep):
        self.config = config
        if provider is None:
            if config.is_mock:
                provider = ScriptedMock.from_file(config.endpoint[len("mock:"):])
            else:
                provider = HttpChatProvider()
        self.provider = provider
        self.bucket = TokenBucket(config.requests_per_minute, sleep=sleep)
        self.sleep = sleep
        self.transport_attempts = 0
        self.exchanges: list[ChatExchange] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> ChatExchange:
        return complete(self.config, prompt, gateway=self)


def complete(config: ProviderConfig, prompt: str, gateway: Gateway | None = None,
             provider=None) -> ChatExchange:
    """One chat completion with up to ``max_retries`` retries on transport failure."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if gateway is None:
        gateway = Gateway(config, provider)
    last = None
    t0 = time.perf_counter()
    for attempt in range(config.max_retries + 1):
        gateway.bucket.acquire()
        with gateway._lock:
            gateway.transport_attempts += 1
        try:
            text = gateway.provider.send(prompt, config)
        except TransportError as exc:
            last = exc
            log.info("transport attempt %d failed: %s", attempt + 1, exc)
            if attempt < config.max_retries and config.backoff_base > 0:
                gateway.sleep(config.backoff_base * (2 ** attempt))
            continue
        if not text:
            raise ProviderError("provider returned an empty response", attempts=attempt + 1)
        ex = ChatExchange(prompt=prompt, response=text,
                          provider_id=getattr(gateway.provider, "provider_id", "provider"),
                          latency=max(0.0, time.perf_counter() - t0),
                          model_name=config.model_name, temperature=config.temperature,
                          attempts=attempt + 1)
        with gateway._lock:
            gateway.exchanges.append(ex)
        return ex
    cls = ProviderTimeoutError if isinstance(last, TransportTimeout) else ProviderError
    raise cls(f"all {config.max_retries + 1} attempts failed: {last}", last_failure=last,
              attempts=config.max_retries + 1)
