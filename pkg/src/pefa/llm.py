"""Chat-completion client with live, record, and deterministic replay modes.

The wire format is the OpenAI-compatible chat completions endpoint. Replay
works off a line-delimited transcript keyed by a stable request digest, so
benchmark runs reproduce exactly without network access.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx


class LlmError(Exception):
    pass


class HttpError(LlmError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class RateLimited(LlmError):
    pass


class MalformedResponse(LlmError):
    pass


class ReplayMiss(LlmError):
    def __init__(self, digest: str):
        super().__init__(f"no transcript entry for digest {digest}")
        self.digest = digest


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        if self.role in (Role.USER, Role.ASSISTANT) and not self.content:
            raise ValueError(f"empty content for {self.role.value} message")


def system(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage(Role.ASSISTANT, content)


@dataclass
class GenerationConfig:
    model_id: str
    base_url: str = "http://localhost:8000/v1"
    temperature: float = 0.8
    top_k: int | None = 30
    max_tokens: int = 2048
    provider: str = "DEFAULT"
    # some endpoints cap temperature at 1; values above 1 are halved then
    send_top_k: bool = True
    temperature_capped_at_one: bool = False
    timeout_s: float = 120.0
    retry_base_delay_s: float = 1.0

    def applied_temperature(self) -> float:
        if self.temperature_capped_at_one and self.temperature > 1.0:
            return self.temperature / 2.0
        return self.temperature


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    estimated: bool = False

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def estimate_tokens(text: str) -> int:
    """Fallback token count when the provider omits usage: ceil(len/4)."""
    return math.ceil(len(text) / 4)


def accumulate_usage(usages) -> Usage:
    """Fieldwise sum; the result is flagged estimated if any input was."""
    p = c = 0
    est = False
    for u in usages:
        p += u.prompt_tokens
        c += u.completion_tokens
        est = est or u.estimated
    return Usage(p, c, est)


_RS = "\x1e"  # record separator between serialized messages


def serialize_messages(messages) -> str:
    """Stable serialization used by the request digest: role + newline +
    content, records joined by the RS control character."""
    return _RS.join(f"{m.role.value}\n{m.content}" for m in messages)


def request_digest(model_id: str, messages, temperature: float) -> str:
    payload = f"{model_id}{_RS}{serialize_messages(messages)}{_RS}{temperature!r}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class TranscriptStore:
    """Line-delimited (digest -> completion, usage) store; exact lookups only.

    Concurrent reads are lock-free; writes are serialized.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, tuple[str, Usage]] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                u = rec["usage"]
                self._entries[rec["digest"]] = (
                    rec["completion"],
                    Usage(u["prompt_tokens"], u["completion_tokens"], u.get("estimated", False)),
                )

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str) -> tuple[str, Usage] | None:
        return self._entries.get(digest)

    def put(self, digest: str, completion: str, usage: Usage) -> None:
        with self._lock:
            self._entries[digest] = (completion, usage)
            if self.path:
                rec = {
                    "digest": digest,
                    "completion": completion,
                    "usage": {
                        "prompt_tokens": usage.prompt_tokens,
                        "completion_tokens": usage.completion_tokens,
                        "estimated": usage.estimated,
                    },
                }
                with self.path.open("a") as f:
                    f.write(json.dumps(rec) + "\n")


class LlmClient:
    """Uniform completion client; mode is one of live / record / replay."""

    MAX_ATTEMPTS = 5

    def __init__(
        self,
        cfg: GenerationConfig,
        mode: str = "live",
        store: TranscriptStore | None = None,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode requires a TranscriptStore")
        self.cfg = cfg
        self.mode = mode
        self.store = store
        # serialized request bodies, for post-hoc leak auditing
        self.sent_requests: list[str] = []
        self._lock = threading.Lock()

    def _api_key(self) -> str | None:
        return os.environ.get(f"PEFA_API_KEY_{self.cfg.provider.upper()}")

    def _body(self, messages) -> dict:
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": m.role.value, "content": m.content} for m in messages],
            "temperature": self.cfg.applied_temperature(),
            "max_tokens": self.cfg.max_tokens,
        }
        if self.cfg.top_k is not None and self.cfg.send_top_k:
            body["top_k"] = self.cfg.top_k
        return body

    def complete(self, messages) -> tuple[str, Usage]:
        body = self._body(messages)
        with self._lock:
            self.sent_requests.append(json.dumps(body))
        digest = request_digest(self.cfg.model_id, messages, self.cfg.temperature)

        if self.mode == "replay":
            hit = self.store.get(digest)
            if hit is None:
                raise ReplayMiss(digest)
            return hit

        text, usage = self._http_complete(body)
        if self.mode == "record":
            self.store.put(digest, text, usage)
        return text, usage

    def _http_complete(self, body: dict) -> tuple[str, Usage]:
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_status = None
        for attempt in range(self.MAX_ATTEMPTS):
            try:
                resp = httpx.post(url, json=body, headers=headers, timeout=self.cfg.timeout_s)
            except httpx.HTTPError as e:
                raise HttpError(0, str(e)) from e
            if resp.status_code == 429 or resp.status_code >= 500:
                last_status = resp.status_code
                if attempt < self.MAX_ATTEMPTS - 1:
                    time.sleep(self.cfg.retry_base_delay_s * (2**attempt))
                    continue
                if resp.status_code == 429:
                    raise RateLimited(f"still rate limited after {self.MAX_ATTEMPTS} attempts")
                raise HttpError(resp.status_code, resp.text)
            if resp.status_code != 200:
                raise HttpError(resp.status_code, resp.text)
            return self._parse_response(resp, body)
        raise HttpError(last_status or 0)

    def _parse_response(self, resp, body: dict) -> tuple[str, Usage]:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(str(e)) from e
        if not isinstance(text, str):
            raise MalformedResponse("non-string completion content")
        u = payload.get("usage")
        if isinstance(u, dict) and "prompt_tokens" in u and "completion_tokens" in u:
            usage = Usage(int(u["prompt_tokens"]), int(u["completion_tokens"]))
        else:
            prompt_text = "\n".join(m["content"] for m in body["messages"])
            usage = Usage(estimate_tokens(prompt_text), estimate_tokens(text), estimated=True)
        return text, usage
