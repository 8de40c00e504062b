"""Single choke-point for model calls: live HTTP, scripted fixtures, replay.

All reproducibility machinery lives here: request digests, transcript
record/replay, retry with exponential backoff, and a sliding-window rate
limiter. Clock, sleep, and RNG are injectable so retry and rate-limit
behavior is testable with a virtual clock.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx

TRANSCRIPT_FORMAT_VERSION = 1


class GatewayError(Exception):
    pass


class MissingApiKey(GatewayError):
    pass


class RateLimitExhausted(GatewayError):
    pass


class BackendTimeout(GatewayError):
    pass


class ScriptMissingFixture(GatewayError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"no scripted fixture matches tag {tag!r}")


class ReplayMissingTag(GatewayError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"transcript has no entry for tag {tag!r}")


class ReplayDigestMismatch(GatewayError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(
            f"request digest for tag {tag!r} differs from the recorded run; "
            "the pipeline has drifted since recording"
        )


class DuplicateTag(GatewayError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"tag {tag!r} was already issued in this run")


class TranscriptWriteFailed(GatewayError):
    pass


class TranscriptFormatError(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    tag: str
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"  # live | scripted | replay
    endpoint_url: str = ""
    model_name: str = "gpt-4"
    api_key_env: str = "REVQ_API_KEY"
    script_path: str = ""
    transcript_path: str = ""
    rate_limit: int = 30
    max_retries: int = 3
    timeout_seconds: int = 60
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind == "live" and not (self.endpoint_url and self.model_name):
            raise ValueError("live backend requires endpoint_url and model_name")
        if self.kind == "scripted" and not self.script_path:
            raise ValueError("scripted backend requires script_path")
        if self.kind == "replay" and not self.transcript_path:
            raise ValueError("replay backend requires transcript_path")


def request_digest(request: ChatRequest) -> bytes:
    """Digest over prompt content and sampling knobs; tag excluded."""
    material = json.dumps(
        [
            request.system_prompt,
            request.user_prompt,
            request.temperature,
            request.max_output_tokens,
        ],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(material.encode("utf-8")).digest()


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class ScriptedBackend:
    """Deterministic stand-in for the live model, keyed by request tag.

    Script file schema: {"tags": {tag: text}, "substrings": [{"match": str,
    "response": str}]}. A flat {tag: text} object is also accepted.
    """

    is_live = False
    max_in_flight = 1

    def __init__(self, script: str | Path | dict):
        if isinstance(script, dict):
            data = script
        else:
            data = json.loads(Path(script).read_text(encoding="utf-8"))
        if "tags" in data or "substrings" in data:
            self._tags = dict(data.get("tags", {}))
            self._substrings = list(data.get("substrings", []))
        else:
            self._tags = dict(data)
            self._substrings = []
        self.descriptor = "scripted"

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.tag in self._tags:
            return ChatResponse(text=self._tags[request.tag], backend_id="scripted")
        for rule in self._substrings:
            if rule["match"] in request.user_prompt:
                return ChatResponse(text=rule["response"], backend_id="scripted")
        raise ScriptMissingFixture(request.tag)


def load_transcript(path: str | Path) -> tuple[dict, list[dict]]:
    """Read a JSON Lines transcript; first line is the header."""
    lines = [
        line for line in Path(path).read_text(encoding="utf-8").split("\n") if line
    ]
    if not lines:
        raise TranscriptFormatError(f"empty transcript: {path}")
    header = json.loads(lines[0])
    if header.get("format_version") != TRANSCRIPT_FORMAT_VERSION:
        raise TranscriptFormatError(
            f"unsupported transcript format_version: {header.get('format_version')}"
        )
    return header, [json.loads(line) for line in lines[1:]]


class ReplayBackend:
    """Serves recorded responses, verifying the request digest per tag."""

    is_live = False
    max_in_flight = 1

    def __init__(self, transcript_path: str | Path):
        self.header, entries = load_transcript(transcript_path)
        self._by_tag = {entry["tag"]: entry for entry in entries}
        self.descriptor = self.header.get("backend_descriptor") or "replay"

    def complete(self, request: ChatRequest) -> ChatResponse:
        entry = self._by_tag.get(request.tag)
        if entry is None:
            raise ReplayMissingTag(request.tag)
        if entry["request_digest"] != request_digest(request).hex():
            raise ReplayDigestMismatch(request.tag)
        resp = entry["response"]
        return ChatResponse(
            text=resp["text"],
            backend_id=resp.get("backend_id", "replay"),
            input_tokens=resp.get("input_tokens", 0),
            output_tokens=resp.get("output_tokens", 0),
        )


class _SlidingWindowLimiter:
    """At most `limit` acquisitions in any trailing 60-second window."""

    def __init__(self, limit: int, clock, sleep):
        self._limit = limit
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self._limit:
                    break
                # epsilon nudges past float-equality at the window edge
                wait = max(60.0 - (now - self._stamps[0]), 0.0) + 1e-6
                self._sleep(wait)
            self._stamps.append(self._clock())


class LiveBackend:
    """HTTP chat-completion backend with retry, backoff, and rate limiting.

    Wire shape is the de-facto chat-completion schema (messages array with
    system/user roles) so any compatible endpoint works.
    """

    is_live = True

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        clock=time.monotonic,
        sleep=time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.descriptor = f"live:{config.model_name}"
        self.max_in_flight = config.max_in_flight
        self._clock = clock
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._limiter = _SlidingWindowLimiter(config.rate_limit, clock, sleep)
        self._client = httpx.Client(
            transport=transport, timeout=config.timeout_seconds
        )
        self.attempt_log: list[float] = []

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise MissingApiKey(
                f"environment variable {self.config.api_key_env} is not set"
            )
        return key

    def _backoff_delay(self, retry_index: int) -> float:
        base = 1.0 * (2.0 ** retry_index)
        return base * (1.0 + self._rng.uniform(-0.2, 0.2))

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = self._api_key()
        body = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {key}"}
        last_error: Exception | None = None
        timed_out = False
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self._backoff_delay(attempt - 1))
            self._limiter.acquire()
            self.attempt_log.append(self._clock())
            try:
                resp = self._client.post(
                    self.config.endpoint_url, json=body, headers=headers
                )
            except httpx.TimeoutException as exc:
                last_error, timed_out = exc, True
                continue
            except httpx.TransportError as exc:
                last_error, timed_out = exc, False
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = GatewayError(f"HTTP {resp.status_code}")
                timed_out = False
                continue
            if resp.status_code >= 400:
                raise GatewayError(
                    f"backend rejected request: HTTP {resp.status_code}"
                )
            payload = resp.json()
            usage = payload.get("usage", {}) or {}
            return ChatResponse(
                text=payload["choices"][0]["message"]["content"],
                backend_id=self.descriptor,
                input_tokens=usage.get("prompt_tokens", 0),
                output_tokens=usage.get("completion_tokens", 0),
            )
        if timed_out:
            raise BackendTimeout(str(last_error))
        raise RateLimitExhausted(
            f"retries exhausted after {self.config.max_retries + 1} attempts: "
            f"{last_error}"
        )


class RecordingGateway:
    """Wraps any backend and records every exchange to a JSON Lines transcript.

    The file is rewritten atomically (temp file + rename) on each flush, with
    run metadata written into the header at finalize().
    """

    def __init__(self, inner, transcript_path: str | Path):
        self._inner = inner
        self._path = Path(transcript_path)
        self._entries: list[dict] = []
        self._seen_tags: set[str] = set()
        self._lock = threading.Lock()
        self._header = {
            "format_version": TRANSCRIPT_FORMAT_VERSION,
            "backend_descriptor": inner.descriptor,
            "run_id": None,
            "started_at": None,
            "finished_at": None,
        }

    @property
    def descriptor(self) -> str:
        return self._inner.descriptor

    @property
    def is_live(self) -> bool:
        return getattr(self._inner, "is_live", False)

    @property
    def max_in_flight(self) -> int:
        return getattr(self._inner, "max_in_flight", 1)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if request.tag in self._seen_tags:
                raise DuplicateTag(request.tag)
            self._seen_tags.add(request.tag)
        response = self._inner.complete(request)
        with self._lock:
            self._entries.append(
                {
                    "tag": request.tag,
                    "request_digest": request_digest(request).hex(),
                    "request": asdict(request),
                    "response": asdict(response),
                    "timestamp": _utc_now_iso(),
                }
            )
            self._flush_locked()
        return response

    def finalize(self, run_id: str, started_at: str, finished_at: str) -> None:
        with self._lock:
            self._header.update(
                run_id=run_id, started_at=started_at, finished_at=finished_at
            )
            self._flush_locked()

    def _flush_locked(self) -> None:
        rows = [json.dumps(self._header, sort_keys=True)]
        rows.extend(json.dumps(e, sort_keys=True) for e in self._entries)
        tmp = self._path.with_suffix(self._path.suffix + ".tmp")
        try:
            tmp.write_text("\n".join(rows) + "\n", encoding="utf-8")
            tmp.replace(self._path)
        except OSError as exc:
            raise TranscriptWriteFailed(str(exc)) from exc


def build_backend(
    config: BackendConfig,
    transport: httpx.BaseTransport | None = None,
):
    if config.kind == "live":
        return LiveBackend(config, transport=transport)
    if config.kind == "scripted":
        return ScriptedBackend(config.script_path)
    if config.kind == "replay":
        return ReplayBackend(config.transcript_path)
    raise ValueError(f"unknown backend kind: {config.kind}")
