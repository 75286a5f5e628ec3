"""Model query boundary: remote chat endpoint, replay store, mocks, and answer parsing.

Every client shares one contract, ``query(ModelRequest) -> ModelResponse``.
Responses are cached by a content hash of (audio bytes, prompt text, params),
so moving a dataset on disk does not invalidate cached results.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable

from .errors import AuthError, ClientError, NetworkDisabled, ParseFailure, RemoteFailure, ReplayMiss, Timeout

if TYPE_CHECKING:
    from .prompting import LabelSet

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
DEFAULT_MAX_IN_FLIGHT = 4

_network_lock = threading.Lock()
_network_disabled = False


def disable_network(disabled: bool = True) -> None:
    """Process-wide kill switch; remote clients raise NetworkDisabled while set."""
    global _network_disabled
    with _network_lock:
        _network_disabled = disabled


def network_disabled() -> bool:
    return _network_disabled


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass(frozen=True)
class GenerationParams:
    model_id: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 256


@dataclass(frozen=True)
class ModelRequest:
    text: str
    audio_path: str | None = None
    params: GenerationParams = field(default_factory=GenerationParams)
    audio_sha256: str | None = None

    @classmethod
    def build(cls, text: str, audio_path: str | Path | None = None, params: GenerationParams | None = None) -> "ModelRequest":
        digest = sha256_file(audio_path) if audio_path is not None else None
        return cls(text, str(audio_path) if audio_path is not None else None, params or GenerationParams(), digest)

    @property
    def idempotency_key(self) -> str:
        payload = {"audio": self.audio_sha256, "text": self.text, "params": asdict(self.params)}
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def describe(self) -> dict:
        return {"audio_sha256": self.audio_sha256, "text": self.text, "params": asdict(self.params)}


@dataclass(frozen=True)
class ModelResponse:
    text: str
    latency_ms: float
    model_id: str
    cached: bool = False


class ResponseStore:
    """Directory of ``<idempotency_key>.json`` files; used both as cache and replay store."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self.path(key)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, req: ModelRequest, text: str, model_id: str) -> None:
        entry = {"key": req.idempotency_key, "request": req.describe(), "response": {"text": text, "model_id": model_id}}
        p = self.path(req.idempotency_key)
        tmp = p.with_suffix(f".tmp{threading.get_ident()}")
        tmp.write_text(json.dumps(entry, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        with self._lock:
            os.replace(tmp, p)

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.json"))


class RateLimiter:
    """Caps concurrent requests and, optionally, requests per rolling minute."""

    def __init__(self, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT, requests_per_minute: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self.max_in_flight = max_in_flight
        self.rpm = requests_per_minute
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()
        self._clock = clock
        self._sleep = sleep

    def __enter__(self):
        self._sem.acquire()
        if self.rpm:
            while True:
                with self._lock:
                    now = self._clock()
                    while self._stamps and now - self._stamps[0] >= 60.0:
                        self._stamps.popleft()
                    if len(self._stamps) < self.rpm:
                        self._stamps.append(now)
                        break
                    wait = 60.0 - (now - self._stamps[0])
                self._sleep(max(wait, 0.001))
        return self

    def __exit__(self, *exc):
        self._sem.release()
        return False


class ModelClient:
    """Base client: cache lookup, then ``_complete`` (subclasses), then cache write."""

    model_id = "base"

    def __init__(self, cache_dir: str | Path | None = None):
        self.cache = ResponseStore(cache_dir) if cache_dir else None
        self._count_lock = threading.Lock()
        self.calls = 0  # backend invocations, cache hits excluded

    def _bump(self) -> None:
        with self._count_lock:
            self.calls += 1

    def query(self, req: ModelRequest) -> ModelResponse:
        if self.cache is not None:
            hit = self.cache.get(req.idempotency_key)
            if hit is not None:
                return ModelResponse(hit["response"]["text"], 0.0, hit["response"]["model_id"], cached=True)
        t0 = time.perf_counter()
        self._bump()
        text = self._complete(req)
        if not isinstance(text, str) or not text.strip():
            raise RemoteFailure(f"{self.model_id}: empty completion")
        latency = (time.perf_counter() - t0) * 1000.0
        if self.cache is not None:
            self.cache.put(req, text, self.model_id)
        return ModelResponse(text, latency, self.model_id, cached=False)

    def _complete(self, req: ModelRequest) -> str:
        raise NotImplementedError


class MockClient(ModelClient):
    """Answers with ``responder(request)``; for tests and oracle runs."""

    def __init__(self, responder: Callable[[ModelRequest], str] | str, model_id: str = "mock", cache_dir=None):
        super().__init__(cache_dir)
        self.responder = responder if callable(responder) else (lambda _req, _t=responder: _t)
        self.model_id = model_id
        self.requests: list[ModelRequest] = []

    def _complete(self, req: ModelRequest) -> str:
        with self._count_lock:
            self.requests.append(req)
        return self.responder(req)


class ReplayClient(ModelClient):
    """Serves recorded responses only; a missing recording is an error, never a network call."""

    model_id = "replay"

    def __init__(self, store_dir: str | Path):
        super().__init__(None)
        self.store = ResponseStore(store_dir)

    def query(self, req: ModelRequest) -> ModelResponse:
        hit = self.store.get(req.idempotency_key)
        if hit is None:
            raise ReplayMiss(f"no recording for key {req.idempotency_key[:12]}")
        self._bump()
        return ModelResponse(hit["response"]["text"], 0.0, hit["response"]["model_id"], cached=True)


class HTTPChatClient(ModelClient):
    """Minimal JSON-over-HTTP chat client with an optional base64 WAV part.

    Request body::

        {"model": ..., "temperature": ..., "max_tokens": ...,
         "messages": [{"role": "user", "content": [
             {"type": "text", "text": ...},
             {"type": "input_audio", "input_audio": {"data": <b64>, "format": "wav"}}]}]}

    Responses in the common ``choices[0].message.content`` shape or a flat
    ``{"text": ...}`` are accepted.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key_env: str = "CCOT_EMO_API_KEY",
        timeout_s: float = 60.0,
        max_attempts: int = MAX_ATTEMPTS,
        backoff_s: float = 1.0,
        limiter: RateLimiter | None = None,
        cache_dir: str | Path | None = None,
        record_dir: str | Path | None = None,
        transport=None,
        sleep=time.sleep,
    ):
        super().__init__(cache_dir)
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.limiter = limiter or RateLimiter()
        self.recorder = ResponseStore(record_dir) if record_dir else None
        self._transport = transport
        self._sleep = sleep

    def body(self, req: ModelRequest) -> dict:
        content = [{"type": "text", "text": req.text}]
        if req.audio_path:
            data = base64.b64encode(Path(req.audio_path).read_bytes()).decode("ascii")
            content.append({"type": "input_audio", "input_audio": {"data": data, "format": "wav"}})
        return {
            "model": req.params.model_id or self.model_id,
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_output_tokens,
            "messages": [{"role": "user", "content": content}],
        }

    @staticmethod
    def extract_text(payload: dict) -> str:
        if "choices" in payload:
            content = payload["choices"][0]["message"]["content"]
            if isinstance(content, list):
                content = "".join(part.get("text", "") for part in content)
            return content
        if "text" in payload:
            return payload["text"]
        raise RemoteFailure(f"unrecognized response shape: keys {sorted(payload)}")

    def _complete(self, req: ModelRequest) -> str:
        import httpx

        if network_disabled():
            raise NetworkDisabled(f"network disabled; refusing request to {self.endpoint}")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = self.body(req)
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                with self.limiter, httpx.Client(timeout=self.timeout_s, transport=self._transport) as http:
                    resp = http.post(self.endpoint, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = Timeout(f"{self.endpoint}: timed out after {self.timeout_s}s")
                logger.warning("attempt %d/%d timed out: %s", attempt + 1, self.max_attempts, exc)
                continue
            except httpx.TransportError as exc:
                last = RemoteFailure(f"{self.endpoint}: {exc}")
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.max_attempts, exc)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{self.endpoint}: HTTP {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = RemoteFailure(f"{self.endpoint}: HTTP {resp.status_code}")
                logger.warning("attempt %d/%d: HTTP %d", attempt + 1, self.max_attempts, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise RemoteFailure(f"{self.endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                text = self.extract_text(resp.json())
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise RemoteFailure(f"{self.endpoint}: malformed response body ({exc})") from exc
            logger.debug("request %s -> %r", _redact(body), text[:80])
            if self.recorder is not None:
                self.recorder.put(req, text, self.model_id)
            return text
        if isinstance(last, Timeout):
            raise last
        raise RemoteFailure(f"{self.endpoint}: gave up after {self.max_attempts} attempts ({last})")


def _redact(body: dict) -> dict:
    """Copy of a request body safe for logs: audio payloads elided."""
    out = json.loads(json.dumps(body))
    for msg in out.get("messages", []):
        for part in msg.get("content", []):
            if part.get("type") == "input_audio":
                part["input_audio"]["data"] = f"<{len(part['input_audio']['data'])} b64 chars>"
    return out


# --------------------------------------------------------------------------- #
# answer parsing
# --------------------------------------------------------------------------- #

_PAREN_LETTER = re.compile(r"\(([A-Z])\)")
_BARE_LETTER = re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])")


def parse_option_letter(text: str, labelset: "LabelSet") -> str:
    """Map a completion to an emotion name; raises ParseFailure when absent or ambiguous.

    Rules, first match wins: "(X)" with a valid letter; a standalone valid
    capital letter; a unique case-insensitive emotion-name substring.
    """
    if not isinstance(text, str):
        raise ParseFailure(f"completion is {type(text).__name__}, not text")
    by_letter = dict(labelset.options)
    for m in _PAREN_LETTER.finditer(text):
        if m.group(1) in by_letter:
            return by_letter[m.group(1)]
    for m in _BARE_LETTER.finditer(text):
        if m.group(1) in by_letter:
            return by_letter[m.group(1)]
    lowered = text.lower()
    hits = [name for _, name in labelset.options if name.lower() in lowered]
    if len(hits) == 1:
        return hits[0]
    if hits:
        raise ParseFailure(f"ambiguous answer, names {hits}")
    raise ParseFailure("no option letter or emotion name found")
