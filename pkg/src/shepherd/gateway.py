"""HTTP gateway: applies a trained hint policy to live traffic between a
configured SLM and LLM upstream.

The gateway speaks the OpenAI chat-completions wire format. Each incoming
request is treated as one query, run through the configured policy
(proactive or reactive), and answered with the final text; response headers
report the decision variant, hint tokens used, and dollar cost. A /metrics
endpoint exposes the cumulative ledger, the decision histogram, and the
mean decision latency (policy compute only, upstream time excluded).

Responses are never streamed: a hint must be complete before the SLM can
continue from it, so buffering is inherent to the method.
"""

from __future__ import annotations

import json
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .backends import (
    Backend,
    BackendError,
    BackendKind,
    BackendSpec,
    HttpBackend,
    MockBackend,
    MockScript,
    UsageLedger,
)
from .core import CostModel, Query, Role, TaskKind, money_str, tokenize
from .features import Mode
from .policy import PolicyConfig, run_proactive, run_reactive
from .predictor import TrainedModel

_ENV_RE = re.compile(r"\$\{(\w+)\}")


def interpolate_env(value):
    """Replace ${VAR} in strings (recursively through dicts/lists)."""
    if isinstance(value, str):

        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ValueError(f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


def cost_model_from_config(data: dict | None) -> CostModel:
    data = data or {}
    return CostModel.from_per_million(
        data.get("llm_in_per_million", "0.59"),
        data.get("llm_out_per_million", "0.79"),
        data.get("slm_in_per_million", 0),
        data.get("slm_out_per_million", 0),
    )


def mock_script_from_config(data: dict | str, base_dir: Path) -> MockScript:
    if isinstance(data, str):
        with open(base_dir / data, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    alternates = {}
    for alt in data.get("alternates", []):
        alternates[(alt["key"], int(alt["seed"]), float(alt["temperature"]))] = alt["text"]
    return MockScript(
        responses=dict(data.get("responses", {})),
        alternates=alternates,
        entropies={k: float(v) for k, v in data.get("entropies", {}).items()},
    )


def backend_from_config(data: dict, role: Role, cm: CostModel, base_dir: Path) -> Backend:
    kind = BackendKind(data.get("kind", "mock"))
    spec = BackendSpec(
        kind=kind,
        model_name=data.get("model_name", f"{role.value}-model"),
        role=role,
        prices=cm.prices_for(role),
        endpoint_url=data.get("endpoint_url"),
        tokenizer=data.get("tokenizer", "builtin"),
        n_max=int(data.get("n_max", 4096)),
        api_key_env=data.get("api_key_env", "SHEPHERD_API_KEY"),
    )
    if kind == BackendKind.MOCK:
        if "script" not in data:
            raise ValueError(f"mock {role.value} backend needs a script")
        return MockBackend(spec, script=mock_script_from_config(data["script"], base_dir))
    return HttpBackend(spec)


@dataclass
class GatewayConfig:
    slm: dict
    llm: dict
    mode: Mode
    policy: PolicyConfig
    model_path: str
    cost_model: CostModel
    host: str = "127.0.0.1"
    port: int = 8080
    task_kind: TaskKind = TaskKind.MATH_NUMERIC
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path: str | Path) -> "GatewayConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            data = interpolate_env(json.load(fh))
        policy_data = data.get("policy", {})
        listen = data.get("listen", {})
        return cls(
            slm=data["slm"],
            llm=data["llm"],
            mode=Mode(data.get("mode", "reactive")),
            policy=PolicyConfig(
                alpha=float(policy_data.get("alpha", 0.5)),
                eta_hint=int(policy_data.get("eta_hint", 256)),
                n_max=int(policy_data.get("n_max", 4096)),
                consensus_samples=int(policy_data.get("consensus_samples", 3)),
                consensus_quorum=int(policy_data.get("consensus_quorum", 2)),
                sample_temperature=float(policy_data.get("sample_temperature", 0.3)),
                sample_top_p=float(policy_data.get("sample_top_p", 0.95)),
                multisample_passes=int(policy_data.get("multisample_passes", 8)),
            ),
            model_path=data["model"],
            cost_model=cost_model_from_config(data.get("cost_model")),
            host=listen.get("host", "127.0.0.1"),
            port=int(listen.get("port", 8080)),
            task_kind=TaskKind(data.get("task_kind", "math_numeric")),
            base_dir=path.parent,
        )


class Gateway:
    """Request pipeline plus cumulative metrics; transport-agnostic."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        # Refuse to construct (and therefore to serve) on a broken model
        # artifact or backend config.
        self.model = TrainedModel.load(config.base_dir / config.model_path)
        if self.model.mode != config.mode:
            raise ValueError(
                f"model artifact is {self.model.mode.value} but the gateway is configured {config.mode.value}"
            )
        self.slm = backend_from_config(config.slm, Role.SLM, config.cost_model, config.base_dir)
        self.llm = backend_from_config(config.llm, Role.LLM, config.cost_model, config.base_dir)
        self.ledger = UsageLedger()
        self._lock = threading.Lock()
        self._requests = 0
        self._decisions: Counter = Counter()
        self._latency_ms_total = 0.0
        self._reported_cost_total = None

    def handle_completion(self, body: dict) -> tuple[int, dict, dict[str, str]]:
        """Returns (status, response body, extra headers)."""
        try:
            query_text = self._query_text(body)
        except ValueError as exc:
            return 400, {"error": {"type": "bad_request", "message": str(exc)}}, {}

        with self._lock:
            self._requests += 1
            request_id = self._requests
        query = Query(
            id=f"req-{request_id}",
            prompt=tokenize(query_text, self.slm.spec.tokenizer),
            task_kind=self.config.task_kind,
        )
        runner = run_proactive if self.config.mode == Mode.PROACTIVE else run_reactive
        try:
            outcome = runner(query, self.model, self.config.policy, self.slm, self.llm, None, self.ledger)
        except BackendError as exc:
            return (
                502,
                {
                    "error": {
                        "type": "upstream_failure",
                        "message": str(exc),
                        "decision_trace": {"query_id": query.id, "attempts": exc.attempts},
                    }
                },
                {},
            )

        with self._lock:
            self._decisions[outcome.decision.variant.value] += 1
            self._latency_ms_total += outcome.decision_latency_ms

        decision_header = outcome.decision.variant.value
        if outcome.decision.hint_tokens:
            decision_header = f"hint; n={outcome.decision.hint_tokens}"
        headers = {
            "x-shepherd-decision": decision_header,
            "x-shepherd-hint-tokens": str(outcome.decision.hint_tokens),
            "x-shepherd-cost-usd": money_str(outcome.dollars),
        }
        response = {
            "id": f"shepherd-{request_id}",
            "object": "chat.completion",
            "model": self.llm.spec.model_name if outcome.decision.variant.value == "full_llm" else self.slm.spec.model_name,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": outcome.final_text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": outcome.slm_usage.input_tokens + outcome.llm_usage.input_tokens,
                "completion_tokens": outcome.slm_usage.output_tokens + outcome.llm_usage.output_tokens,
                "total_tokens": (
                    outcome.slm_usage.input_tokens
                    + outcome.llm_usage.input_tokens
                    + outcome.slm_usage.output_tokens
                    + outcome.llm_usage.output_tokens
                ),
            },
        }
        return 200, response, headers

    @staticmethod
    def _query_text(body: dict) -> str:
        if not isinstance(body, dict):
            raise ValueError("request body must be a JSON object")
        messages = body.get("messages")
        if not isinstance(messages, list) or not messages:
            raise ValueError("request needs a non-empty 'messages' list")
        parts = []
        for msg in messages:
            if not isinstance(msg, dict) or "content" not in msg or "role" not in msg:
                raise ValueError("each message needs 'role' and 'content'")
            if msg["role"] == "user":
                if not isinstance(msg["content"], str):
                    raise ValueError("message content must be a string")
                parts.append(msg["content"])
        if not parts:
            raise ValueError("request carries no user message")
        text = "\n\n".join(parts).strip()
        if not text:
            raise ValueError("user message is empty")
        return text

    def metrics_text(self) -> str:
        with self._lock:
            requests = self._requests
            decisions = dict(self._decisions)
            latency_total = self._latency_ms_total
        served = sum(decisions.values())
        slm = self.ledger.tokens_for(Role.SLM)
        llm = self.ledger.tokens_for(Role.LLM)
        lines = [
            f"shepherd_requests_total {requests}",
            f"shepherd_responses_total {served}",
        ]
        for variant in ("slm_only", "hint", "full_llm"):
            lines.append(f'shepherd_decisions_total{{variant="{variant}"}} {decisions.get(variant, 0)}')
        lines += [
            f"shepherd_slm_input_tokens_total {slm.input_tokens}",
            f"shepherd_slm_output_tokens_total {slm.output_tokens}",
            f"shepherd_llm_input_tokens_total {llm.input_tokens}",
            f"shepherd_llm_output_tokens_total {llm.output_tokens}",
            f"shepherd_cost_usd_total {money_str(self.ledger.dollars())}",
            f"shepherd_decision_latency_ms_mean {latency_total / served if served else 0.0:.4f}",
        ]
        return "\n".join(lines) + "\n"


def _make_handler(gateway: Gateway):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # quiet by default; metrics carry the signal
            pass

        def _send(self, status: int, payload: bytes, content_type: str, headers: dict[str, str] | None = None):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(payload)))
            for key, value in (headers or {}).items():
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self):
            if self.path == "/metrics":
                self._send(200, gateway.metrics_text().encode("utf-8"), "text/plain; charset=utf-8")
            else:
                self._send(404, b'{"error": {"type": "not_found"}}', "application/json")

        def do_POST(self):
            if self.path.rstrip("/") != "/v1/chat/completions":
                self._send(404, b'{"error": {"type": "not_found"}}', "application/json")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"")
            except (ValueError, json.JSONDecodeError):
                self._send(
                    400,
                    b'{"error": {"type": "bad_request", "message": "body is not valid JSON"}}',
                    "application/json",
                )
                return
            status, response, headers = gateway.handle_completion(body)
            self._send(status, json.dumps(response).encode("utf-8"), "application/json", headers)

    return Handler


class GatewayServer:
    """Threaded HTTP server wrapper (port 0 picks an ephemeral port)."""

    def __init__(self, gateway: Gateway, host: str | None = None, port: int | None = None):
        self.gateway = gateway
        host = host if host is not None else gateway.config.host
        port = port if port is not None else gateway.config.port
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(gateway))
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        print(f"[serve] shepherd gateway listening on {self.url} ({self.gateway.config.mode.value} mode)")
        self._httpd.serve_forever()
