"""Model backends: a deterministic mock for tests and an OpenAI-compatible
HTTP client, behind one `generate` entry point that meters all token usage.

The mock realizes budget-truncated generation exactly as a token prefix of a
scripted full response, which is what makes hint prefixes testable without a
real model. The HTTP client sends the output budget in both `max_tokens` and
`max_new_tokens` because providers disagree on the field name.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Callable

from .core import (
    DEFAULT_N_MAX,
    DecodingParams,
    Role,
    ShepherdError,
    TokenPrices,
    TokenSequence,
    get_tokenizer,
    prefix,
)

DEFAULT_API_KEY_ENV = "SHEPHERD_API_KEY"
HTTP_RETRY_ATTEMPTS = 3
HTTP_BACKOFF_SECONDS = 0.25


class BackendError(ShepherdError):
    """Transport or protocol failure after exhausting retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class BackendKind(str, Enum):
    MOCK = "mock"
    HTTP_OPENAI_COMPATIBLE = "http_openai_compatible"


class FinishReason(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    NATURAL_STOP = "natural_stop"
    ERROR = "error"


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class GenerationResult:
    text: str
    tokens: TokenSequence
    usage: Usage
    finish_reason: FinishReason
    token_logprobs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class BackendSpec:
    kind: BackendKind
    model_name: str
    role: Role
    prices: TokenPrices = TokenPrices()
    endpoint_url: str | None = None
    tokenizer: str = "builtin"
    n_max: int = DEFAULT_N_MAX
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_in_flight: int = 8

    def __post_init__(self):
        if self.kind == BackendKind.HTTP_OPENAI_COMPATIBLE and not self.endpoint_url:
            raise ValueError("http backend requires endpoint_url")


@dataclass
class MockScript:
    """Scripted behavior for a mock backend.

    ``responses`` maps a query key to the canonical full response (returned
    at temperature 0). ``alternates`` provides per-(key, seed, temperature)
    responses for stochastic sampling; lookups fall back to the canonical
    response. ``entropies`` optionally scripts a per-token entropy trace,
    surfaced as token logprobs of -entropy.

    A key matches a prompt either exactly or as a substring, so scripts keyed
    by the bare question keep working after hint text is appended.
    """

    responses: dict[str, str] = field(default_factory=dict)
    alternates: dict[tuple[str, int, float], str] = field(default_factory=dict)
    entropies: dict[str, float] = field(default_factory=dict)

    def resolve_key(self, prompt_text: str) -> str | None:
        if prompt_text in self.responses:
            return prompt_text
        hits = [k for k in self.responses if k in prompt_text]
        if not hits:
            return None
        return max(hits, key=len)

    def response_for(self, key: str, params: DecodingParams) -> str:
        if params.temperature > 0 and params.seed is not None:
            alt = self.alternates.get((key, params.seed, params.temperature))
            if alt is not None:
                return alt
        return self.responses[key]


class MockBackend:
    """Deterministic test double.

    Requesting a budget of n returns exactly the n-token prefix of the
    scripted full response; temperature 0 always yields the canonical text.
    A ``responder`` callable may replace the static script for fully dynamic
    scripting (it receives the prompt text and decoding params and returns
    either a response string or a (string, entropy) pair).
    """

    def __init__(
        self,
        spec: BackendSpec,
        script: MockScript | None = None,
        responder: Callable[[str, DecodingParams], str | tuple[str, float]] | None = None,
    ):
        if spec.kind != BackendKind.MOCK:
            raise ValueError("MockBackend requires a mock BackendSpec")
        if script is None and responder is None:
            raise ValueError("mock backend needs a script or a responder")
        self.spec = spec
        self.script = script
        self.responder = responder
        self._tokenizer = get_tokenizer(spec.tokenizer)
        self._cache: dict[str, TokenSequence] = {}

    def _full_response(self, prompt_text: str, params: DecodingParams) -> tuple[str, float | None]:
        if self.responder is not None:
            out = self.responder(prompt_text, params)
            if isinstance(out, tuple):
                return out
            return out, None
        key = self.script.resolve_key(prompt_text)
        if key is None:
            raise BackendError(f"mock {self.spec.model_name!r} has no script for prompt {prompt_text[:80]!r}")
        return self.script.response_for(key, params), self.script.entropies.get(key)

    def _tokens_of(self, text: str) -> TokenSequence:
        ts = self._cache.get(text)
        if ts is None:
            ts = self._tokenizer.tokenize(text)
            if len(self._cache) < 65536:
                self._cache[text] = ts
        return ts

    def complete(self, prompt: TokenSequence, params: DecodingParams, want_logprobs: bool = False) -> GenerationResult:
        full_text, entropy = self._full_response(prompt.text, params)
        full = self._tokens_of(full_text)
        if params.max_new_tokens < len(full):
            out = prefix(full, params.max_new_tokens)
            reason = FinishReason.BUDGET_EXHAUSTED
        else:
            out = full
            reason = FinishReason.NATURAL_STOP
        logprobs = None
        if want_logprobs and entropy is not None:
            logprobs = tuple(-entropy for _ in range(len(out)))
        return GenerationResult(
            text=out.text,
            tokens=out,
            usage=Usage(input_tokens=len(prompt), output_tokens=len(out)),
            finish_reason=reason,
            token_logprobs=logprobs,
        )


def build_completion_request(
    spec: BackendSpec,
    prompt: TokenSequence,
    params: DecodingParams,
    want_logprobs: bool = False,
) -> dict:
    """Wire payload for the OpenAI-compatible chat completions endpoint."""
    if spec.kind != BackendKind.HTTP_OPENAI_COMPATIBLE:
        raise ValueError("completion requests are only built for http backends")
    if params.max_new_tokens > spec.n_max:
        raise ValueError(f"budget {params.max_new_tokens} exceeds backend limit {spec.n_max}")
    payload = {
        "model": spec.model_name,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_new_tokens,
        "max_new_tokens": params.max_new_tokens,
    }
    if params.seed is not None:
        payload["seed"] = params.seed
    if want_logprobs:
        payload["logprobs"] = True
    return payload


class HttpBackend:
    """Client for an OpenAI-compatible /v1/chat/completions endpoint.

    The API key is read from the environment at request time and never
    logged. Transient failures are retried by `generate`, not here.
    """

    def __init__(self, spec: BackendSpec, session=None):
        if spec.kind != BackendKind.HTTP_OPENAI_COMPATIBLE:
            raise ValueError("HttpBackend requires an http BackendSpec")
        self.spec = spec
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._tokenizer = get_tokenizer(spec.tokenizer)

    def complete(self, prompt: TokenSequence, params: DecodingParams, want_logprobs: bool = False) -> GenerationResult:
        payload = build_completion_request(self.spec, prompt, params, want_logprobs)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.spec.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.spec.endpoint_url.rstrip("/") + "/v1/chat/completions"
        resp = self._session.post(url, json=payload, headers=headers, timeout=120)
        if resp.status_code != 200:
            raise BackendError(f"upstream {url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise BackendError(f"malformed completion payload from {url}: {exc}") from exc
        tokens = self._tokenizer.tokenize(text)
        usage = body.get("usage") or {}
        # Provider-reported usage wins when present; that is what billing uses.
        input_tokens = int(usage.get("prompt_tokens", len(prompt)))
        output_tokens = int(usage.get("completion_tokens", len(tokens)))
        logprobs = _parse_logprobs(choice)
        reason = FinishReason.BUDGET_EXHAUSTED if choice.get("finish_reason") == "length" else FinishReason.NATURAL_STOP
        return GenerationResult(
            text=text,
            tokens=tokens,
            usage=Usage(input_tokens=input_tokens, output_tokens=output_tokens),
            finish_reason=reason,
            token_logprobs=logprobs,
        )


def _parse_logprobs(choice: dict) -> tuple[float, ...] | None:
    lp = choice.get("logprobs")
    if not lp:
        return None
    content = lp.get("content")
    if not content:
        return None
    try:
        return tuple(float(item["logprob"]) for item in content)
    except (KeyError, TypeError, ValueError):
        return None


Backend = MockBackend | HttpBackend


@dataclass(frozen=True)
class UsageEvent:
    role: Role
    model_name: str
    input_tokens: int
    output_tokens: int
    dollars: Decimal


class UsageLedger:
    """Append-only token/cost accounting; the dollar total is always
    re-derivable from the event log (conservation)."""

    def __init__(self):
        self._events: list[UsageEvent] = []
        self._lock = threading.Lock()

    def record(self, role: Role, model_name: str, usage: Usage, prices: TokenPrices) -> UsageEvent:
        dollars = usage.input_tokens * prices.input + usage.output_tokens * prices.output
        event = UsageEvent(role, model_name, usage.input_tokens, usage.output_tokens, dollars)
        with self._lock:
            self._events.append(event)
        return event

    @property
    def events(self) -> tuple[UsageEvent, ...]:
        with self._lock:
            return tuple(self._events)

    def tokens_for(self, role: Role) -> Usage:
        events = self.events
        return Usage(
            input_tokens=sum(e.input_tokens for e in events if e.role == role),
            output_tokens=sum(e.output_tokens for e in events if e.role == role),
        )

    def dollars(self) -> Decimal:
        return sum((e.dollars for e in self.events), Decimal(0))

    def merge(self, other: "UsageLedger") -> None:
        for event in other.events:
            with self._lock:
                self._events.append(event)


def record_usage(ledger: UsageLedger, result: GenerationResult, role: Role, prices: TokenPrices) -> UsageEvent:
    return ledger.record(role, "", result.usage, prices)


_EMPTY = TokenSequence()


def generate(
    backend: Backend,
    prompt: TokenSequence,
    params: DecodingParams,
    ledger: UsageLedger | None = None,
    want_logprobs: bool = False,
) -> GenerationResult:
    """Run one completion and meter its usage.

    Deterministic when temperature is 0 (or the seed is fixed) on mock
    backends. A zero budget short-circuits without touching the backend.
    HTTP transport failures are retried with exponential backoff; usage is
    recorded only on success, so retries never double-count.
    """
    if params.max_new_tokens > backend.spec.n_max:
        raise ValueError(f"budget {params.max_new_tokens} exceeds backend limit {backend.spec.n_max}")
    if params.max_new_tokens == 0:
        return GenerationResult(
            text="",
            tokens=_EMPTY,
            usage=Usage(0, 0),
            finish_reason=FinishReason.BUDGET_EXHAUSTED,
        )

    attempts = HTTP_RETRY_ATTEMPTS if isinstance(backend, HttpBackend) else 1
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            result = backend.complete(prompt, params, want_logprobs=want_logprobs)
            break
        except BackendError as exc:
            last_error = exc
            if attempt + 1 < attempts:
                time.sleep(HTTP_BACKOFF_SECONDS * (2**attempt))
    else:
        raise BackendError(str(last_error), attempts=attempts) from last_error

    if ledger is not None:
        ledger.record(backend.spec.role, backend.spec.model_name, result.usage, backend.spec.prices)
    return result
