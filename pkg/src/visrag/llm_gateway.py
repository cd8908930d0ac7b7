"""The one place that talks to a language model.

Three backends share the :meth:`complete` interface:

``RemoteBackend``
    JSON-over-HTTP chat completions (``POST {base}/chat/completions``,
    ``messages`` in, ``choices[0].message.content`` out).
``ReplayBackend``
    Serves replies from a transcript file so whole pipeline runs are
    reproducible offline.
``RecordBackend``
    Forwards to a remote backend and appends each exchange to a transcript.

Transcript files are JSON lines of ``{"digest", "content", "usage"}``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_MODEL = "gpt-4o"


class GatewayError(Exception):
    pass


class EndpointUnreachable(GatewayError):
    pass


class AuthFailure(GatewayError):
    pass


class RateLimited(GatewayError):
    def __init__(self, retry_after: float | None = None, detail: str = ""):
        super().__init__(f"rate limited (retry after {retry_after}s) {detail}".strip())
        self.retry_after = retry_after


class TranscriptMiss(GatewayError):
    def __init__(self, digest: str, detail: str = ""):
        super().__init__(f"no transcript entry for request {digest[:16]}{': ' + detail if detail else ''}")
        self.digest = digest


class MalformedProviderResponse(GatewayError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("the first message must come from system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def to_payload(self) -> dict:
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            payload["max_tokens"] = self.max_tokens
        return payload

    def digest(self) -> str:
        canonical = json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_model(self, model: str) -> "ChatRequest":
        return ChatRequest(self.messages, model, self.temperature, self.max_tokens)

    @property
    def system(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "system")

    @property
    def user(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "user")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatReply:
    content: str
    usage: Usage = field(default_factory=Usage)
    provider_id: str = ""


@dataclass
class TranscriptEntry:
    digest: str | None
    reply: ChatReply
    consumed: bool = False

    def to_dict(self) -> dict:
        u = self.reply.usage
        return {
            "digest": self.digest,
            "content": self.reply.content,
            "usage": {"prompt_tokens": u.prompt_tokens, "completion_tokens": u.completion_tokens},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptEntry":
        u = d.get("usage") or {}
        usage = Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
        return cls(d.get("digest"), ChatReply(d["content"], usage, "replay"))


def read_transcript(path: str | os.PathLike) -> list[TranscriptEntry]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TranscriptEntry.from_dict(json.loads(line)) for line in lines if line.strip()]


def write_transcript(entries, path: str | os.PathLike) -> None:
    Path(path).write_text("".join(json.dumps(e.to_dict()) + "\n" for e in entries), encoding="utf-8")


class RemoteBackend:
    """OpenAI-compatible HTTP client with bounded concurrency and retry on 429."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str | None = None,
        *,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        if not base_url:
            raise ValueError("remote backend needs a base URL (LLM_BASE_URL)")
        if not api_key:
            raise AuthFailure("remote backend needs a credential (LLM_API_KEY)")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.attempts = 0

    @classmethod
    def from_env(cls, env=None, **kw) -> "RemoteBackend":
        env = os.environ if env is None else env
        return cls(env.get("LLM_BASE_URL", ""), env.get("LLM_API_KEY", ""), env.get("LLM_MODEL") or None, **kw)

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}/{path.lstrip('/')}"
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        for attempt in range(self.max_retries + 1):
            self.attempts += 1
            try:
                with self._slots:
                    resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as e:
                raise EndpointUnreachable(f"{url}: {e}") from e
            if resp.status_code in (401, 403):
                raise AuthFailure(f"{url}: HTTP {resp.status_code}")
            if resp.status_code == 429:
                retry_after = _retry_after(resp)
                if attempt == self.max_retries:
                    raise RateLimited(retry_after, f"after {attempt + 1} attempts")
                delay = retry_after if retry_after is not None else self.backoff * 2**attempt
                logger.info("rate limited by %s, retrying in %.1fs", url, delay)
                self.sleep(delay)
                continue
            if resp.status_code >= 500:
                raise EndpointUnreachable(f"{url}: HTTP {resp.status_code}")
            if resp.status_code >= 400:
                raise MalformedProviderResponse(f"{url}: HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                return resp.json()
            except ValueError as e:
                raise MalformedProviderResponse(f"{url}: body is not JSON") from e
        raise AssertionError("unreachable")

    def complete(self, request: ChatRequest) -> ChatReply:
        if self.model and request.model != self.model:
            request = request.with_model(self.model)
        data = self._post("chat/completions", request.to_payload())
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedProviderResponse(f"missing choices[0].message.content in {str(data)[:200]}") from e
        if not isinstance(content, str):
            raise MalformedProviderResponse("message content is not a string")
        u = data.get("usage") or {}
        usage = Usage(int(u.get("prompt_tokens") or 0), int(u.get("completion_tokens") or 0))
        return ChatReply(content, usage, str(data.get("id", "")))

    def embed(self, texts: list[str], model: str) -> list[list[float]]:
        data = self._post("embeddings", {"model": model, "input": texts})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return [r["embedding"] for r in rows]
        except (KeyError, TypeError) as e:
            raise MalformedProviderResponse("missing data[].embedding") from e


def _retry_after(resp) -> float | None:
    value = resp.headers.get("Retry-After")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


class ReplayBackend:
    """Serve replies from a transcript.

    ``mode="ordered"`` hands out entries strictly in sequence; an entry that
    carries a digest must match the request, an entry with ``digest: null``
    matches any request. ``mode="digest"`` returns the first unconsumed entry
    whose digest equals the request's. Running out is always an error.
    """

    def __init__(self, entries: list[TranscriptEntry], mode: str = "ordered"):
        if mode not in ("ordered", "digest"):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.entries = entries
        self.mode = mode
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike, mode: str = "ordered") -> "ReplayBackend":
        return cls(read_transcript(path), mode)

    @property
    def remaining(self) -> int:
        return sum(not e.consumed for e in self.entries)

    def complete(self, request: ChatRequest) -> ChatReply:
        digest = request.digest()
        with self._lock:
            self.calls += 1
            if self.mode == "ordered":
                entry = next((e for e in self.entries if not e.consumed), None)
                if entry is None:
                    raise TranscriptMiss(digest, "transcript exhausted")
                if entry.digest is not None and entry.digest != digest:
                    raise TranscriptMiss(digest, f"next entry expects {entry.digest[:16]}")
            else:
                entry = next((e for e in self.entries if not e.consumed and e.digest == digest), None)
                if entry is None:
                    raise TranscriptMiss(digest)
            entry.consumed = True
            return entry.reply

    def embed(self, texts, model):
        raise GatewayError("replay transcripts do not carry embeddings")


class RecordBackend:
    """Forward to ``remote`` and append every exchange to ``sink``."""

    def __init__(self, remote, sink: str | os.PathLike):
        self.remote = remote
        self.sink = Path(sink)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatReply:
        reply = self.remote.complete(request)
        line = json.dumps(TranscriptEntry(request.digest(), reply).to_dict()) + "\n"
        with self._lock, self.sink.open("a", encoding="utf-8") as fh:
            fh.write(line)
        return reply

    def embed(self, texts, model):
        return self.remote.embed(texts, model)


def complete(request: ChatRequest, backend) -> ChatReply:
    return backend.complete(request)
