"""Chat-completion gateway: live OpenAI-compatible HTTP backend, scripted
deterministic mock, bounded-parallelism fan-out, and token/dollar accounting.

All concurrency in the engine lives here. ``complete_many`` fans requests out
over at most ``parallelism`` worker threads and returns results in request
order. Mock backends keep a virtual clock: their scripted latencies are
scheduled over ``parallelism`` virtual workers instead of sleeping, so runs
are deterministic while still honoring the per-query timeout.
"""

from __future__ import annotations

import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .errors import BackendError, ContextOverflowError, GatewayTimeout, LroError


def estimate_tokens(text: str) -> int:
    """Character-ratio token estimate: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


@dataclass
class BackendConfig:
    endpoint: str = ""
    model: str = "mock"
    temperature: float = 0.0
    max_context_tokens: int = 20480
    parallelism: int = 10
    timeout_seconds: float = 1800.0
    retries: int = 1
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.parallelism < 1:
            raise LroError("parallelism must be >= 1")
        if self.timeout_seconds <= 0:
            raise LroError("timeout must be > 0")
        if self.temperature < 0:
            raise LroError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    tag: str = ""

    def __post_init__(self):
        if not self.user:
            raise LroError("chat request needs non-empty user text")

    def prompt_chars(self) -> int:
        return len(self.system) + len(self.user)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency: float = 0.0


@dataclass(frozen=True)
class UsageRecord:
    tag: str
    model: str
    input_tokens: int
    output_tokens: int


class UsageLedger:
    """Thread-safe per-call token log with an optional price table.

    Prices are (input $/1M tokens, output $/1M tokens) per model and always
    come from configuration; nothing is hard-coded here.
    """

    def __init__(self, prices: Optional[Dict[str, Tuple[float, float]]] = None):
        self.records: List[UsageRecord] = []
        self.prices = dict(prices or {})
        self._lock = threading.Lock()

    def add(self, tag: str, model: str, input_tokens: int, output_tokens: int) -> None:
        with self._lock:
            self.records.append(UsageRecord(tag, model, input_tokens, output_tokens))

    def total_input_tokens(self) -> int:
        return sum(r.input_tokens for r in self.records)

    def total_output_tokens(self) -> int:
        return sum(r.output_tokens for r in self.records)

    def call_count(self) -> int:
        return len(self.records)

    def extend(self, other: "UsageLedger") -> None:
        with self._lock:
            self.records.extend(other.records)


def cost(ledger: UsageLedger) -> Dict[str, float]:
    """Dollar cost per model plus ``total``: sum of
    (in_tokens * in_price + out_tokens * out_price) / 1e6."""
    per_model: Dict[str, float] = {}
    for record in ledger.records:
        if record.model not in ledger.prices:
            raise LroError(f"no price configured for model {record.model!r}")
        in_price, out_price = ledger.prices[record.model]
        dollars = (record.input_tokens * in_price + record.output_tokens * out_price) / 1_000_000
        per_model[record.model] = per_model.get(record.model, 0.0) + dollars
    per_model["total"] = sum(per_model.values())
    return per_model


# --- backends -----------------------------------------------------------------

MockRule = Callable[[ChatRequest], Optional[object]]


@dataclass
class MockScript:
    """Deterministic response source: rule callbacks first, then an ordered
    queue. A rule returns None to pass, a string, or (string, latency)."""

    responses: List[object] = field(default_factory=list)
    rules: List[MockRule] = field(default_factory=list)
    default_latency: float = 0.0


class MockBackend:
    """Scripted backend. Tokens are estimated as ceil(chars/4); latencies are
    virtual (recorded, not slept) unless ``real_delay`` is set for
    concurrency tests. Tracks in-flight counts for instrumentation.

    Without a real delay the gateway fans out sequentially, so the response
    queue is consumed in request order (deterministic scripted runs)."""

    virtual_time = True

    def __init__(self, script: MockScript, model: str = "mock",
                 real_delay: float = 0.0):
        self.script = script
        self.model = model
        self.real_delay = real_delay
        self.calls: List[ChatRequest] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._queue_pos = 0

    @property
    def wants_threads(self) -> bool:
        return self.real_delay > 0

    def send(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            with self._lock:
                self.calls.append(req)
                text, latency = self._answer(req)
            if self.real_delay:
                time.sleep(self.real_delay)
        finally:
            with self._lock:
                self.in_flight -= 1
        return ChatResponse(
            text=text,
            input_tokens=estimate_tokens(req.system + req.user),
            output_tokens=estimate_tokens(text),
            latency=latency,
        )

    def _answer(self, req: ChatRequest) -> Tuple[str, float]:
        for rule in self.script.rules:
            answer = rule(req)
            if answer is not None:
                return self._unpack(answer)
        if self._queue_pos < len(self.script.responses):
            answer = self.script.responses[self._queue_pos]
            self._queue_pos += 1
            return self._unpack(answer)
        raise BackendError(f"mock script exhausted at call {len(self.calls)} (tag={req.tag})")

    def _unpack(self, answer) -> Tuple[str, float]:
        if isinstance(answer, tuple):
            text, latency = answer
            return str(text), float(latency)
        return str(answer), self.script.default_latency


def mock_script_from_json(data: dict) -> MockScript:
    """Build a MockScript from its JSON file form: an ordered "responses"
    list (strings or {text, latency}) plus declarative "rules" matched on
    tag_prefix / contains / regex, first hit wins."""
    import re

    responses: List[object] = []
    for entry in data.get("responses", []):
        if isinstance(entry, dict):
            responses.append((str(entry["text"]), float(entry.get("latency", 0.0))))
        else:
            responses.append(str(entry))

    def make_rule(spec: dict) -> MockRule:
        tag_prefix = spec.get("tag_prefix")
        contains = spec.get("contains")
        pattern = re.compile(spec["regex"]) if "regex" in spec else None
        response = str(spec["response"])
        latency = spec.get("latency")

        def rule(req: ChatRequest):
            if tag_prefix and not req.tag.startswith(tag_prefix):
                return None
            if contains and contains not in req.user:
                return None
            if pattern and not pattern.search(req.user):
                return None
            return (response, float(latency)) if latency is not None else response

        return rule

    return MockScript(
        responses=responses,
        rules=[make_rule(r) for r in data.get("rules", [])],
        default_latency=float(data.get("default_latency", 0.0)),
    )


class HttpBackend:
    """OpenAI-compatible chat-completions endpoint over HTTP.

    ``transport`` is passed through to httpx, mainly so tests can stub the
    wire with httpx.MockTransport.
    """

    virtual_time = False
    wants_threads = True

    def __init__(self, cfg: BackendConfig, transport=None):
        import httpx

        self.cfg = cfg
        self.model = cfg.model
        url = cfg.endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url = url + "/chat/completions"
        self.url = url
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=cfg.timeout_seconds,
                                    transport=transport)

    def send(self, req: ChatRequest) -> ChatResponse:
        import httpx

        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        payload = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        started = time.monotonic()
        try:
            response = self._client.post(self.url, json=payload)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if response.status_code != 200:
            raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        body = response.json()
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected completion payload: {exc}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", estimate_tokens(req.system + req.user))),
            output_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            latency=time.monotonic() - started,
        )


def schedule_makespan(latencies: List[float], workers: int) -> float:
    """Virtual completion time of latencies dispatched in order over
    ``workers`` greedy workers (each request goes to the earliest-free one)."""
    if not latencies:
        return 0.0
    free = [0.0] * workers
    for latency in latencies:
        slot = min(range(workers), key=lambda i: free[i])
        free[slot] += latency
    return max(free)


# --- gateway --------------------------------------------------------------------

class Gateway:
    """Bounded-parallelism, order-preserving completion front end.

    One per-query clock: ``start_query`` resets it; every completion draws
    from the remaining budget, mixing real elapsed time with the mock's
    virtual schedule, and the batch aborts with GatewayTimeout once the
    budget is exhausted.
    """

    def __init__(self, cfg: BackendConfig, backend, ledger: Optional[UsageLedger] = None):
        self.cfg = cfg
        self.backend = backend
        self.ledger = ledger if ledger is not None else UsageLedger()
        self._virtual_elapsed = 0.0
        self._real_start = time.monotonic()

    # clock -----------------------------------------------------------------

    def start_query(self) -> None:
        self._virtual_elapsed = 0.0
        self._real_start = time.monotonic()

    def query_elapsed(self) -> float:
        """Elapsed time for the current query; deterministic under mocks."""
        if getattr(self.backend, "virtual_time", False):
            return self._virtual_elapsed
        return time.monotonic() - self._real_start

    def _budget_left(self) -> float:
        real = time.monotonic() - self._real_start
        return self.cfg.timeout_seconds - real - self._virtual_elapsed

    def _check_budget(self) -> None:
        if self._budget_left() <= 0:
            raise GatewayTimeout(
                f"per-query timeout of {self.cfg.timeout_seconds}s exceeded"
            )

    # completion ------------------------------------------------------------

    def complete(self, req: ChatRequest) -> ChatResponse:
        self._check_budget()
        response = self._send_with_retry(req)
        if getattr(self.backend, "virtual_time", False):
            self._virtual_elapsed += response.latency
        self._check_budget()
        return response

    def complete_many(self, reqs: List[ChatRequest]) -> List[ChatResponse]:
        if not reqs:
            return []
        self._check_budget()
        if getattr(self.backend, "wants_threads", True):
            results = self._fan_out_threaded(reqs)
        else:
            # Virtual-time mock without real delays: sequential dispatch keeps
            # queue consumption in request order; timing below still models
            # `parallelism` workers.
            results = [self._send_with_retry(r) for r in reqs]
        if getattr(self.backend, "virtual_time", False):
            self._virtual_elapsed += schedule_makespan(
                [r.latency for r in results], self.cfg.parallelism
            )
        self._check_budget()
        return results

    def _fan_out_threaded(self, reqs: List[ChatRequest]) -> List[ChatResponse]:
        results: List[Optional[ChatResponse]] = [None] * len(reqs)
        pool = ThreadPoolExecutor(max_workers=self.cfg.parallelism)
        try:
            futures = {pool.submit(self._send_with_retry, r): i for i, r in enumerate(reqs)}
            done, not_done = wait(futures, timeout=max(self._budget_left(), 0.0))
            if not_done:
                for future in not_done:
                    future.cancel()
                raise GatewayTimeout(
                    f"batch of {len(reqs)} requests exceeded the "
                    f"{self.cfg.timeout_seconds}s per-query timeout"
                )
            for future, index in futures.items():
                results[index] = future.result()
        finally:
            pool.shutdown(wait=False, cancel_futures=True)
        return results  # type: ignore[return-value]

    def _send_with_retry(self, req: ChatRequest) -> ChatResponse:
        estimated = estimate_tokens(req.system + req.user)
        if estimated > self.cfg.max_context_tokens:
            raise ContextOverflowError(
                f"request estimated at {estimated} tokens exceeds the "
                f"{self.cfg.max_context_tokens}-token context limit"
            )
        attempts = 1 + max(self.cfg.retries, 0)
        last_error: Optional[BackendError] = None
        for _ in range(attempts):
            try:
                response = self.backend.send(req)
                break
            except ContextOverflowError:
                raise
            except BackendError as exc:
                last_error = exc
        else:
            raise last_error  # type: ignore[misc]
        self.ledger.add(req.tag, getattr(self.backend, "model", self.cfg.model),
                        response.input_tokens, response.output_tokens)
        return response
