"""Chat-completion clients: an OpenAI-compatible HTTP client and a scripted replay client."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import httpx

logger = logging.getLogger(__name__)

Message = Tuple[str, str]  # (role, text)
ROLES = ("system", "user", "assistant")


class ClientError(RuntimeError):
    """Transport or service failure; retried by the caller."""


class ScriptMismatch(AssertionError):
    """A fixture entry does not match the prompt it answers (fixture bug, not retried)."""


class ScriptExhausted(ClientError):
    pass


class ChatClient(Protocol):
    def send(self, conversation: Sequence[Message], *, temperature: Optional[float] = None,
             tag: Optional[str] = None) -> str:
        ...


class RateLimiter:
    """Thread-safe requests-per-minute ceiling (evenly spaced slots)."""

    def __init__(self, requests_per_minute: Optional[float], clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self):
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self._sleep(wait)


class HTTPChatClient:
    """OpenAI-compatible ``/chat/completions`` client.

    The API key is read from the environment only.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 requests_per_minute: Optional[float] = 60, timeout: float = 120.0,
                 transport: Optional[httpx.BaseTransport] = None, extra_params: Optional[dict] = None):
        key = os.environ.get(api_key_env)
        if not key:
            raise ClientError(f"environment variable {api_key_env} is not set")
        self.url = endpoint.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model = model
        self.extra_params = dict(extra_params or {})
        self.limiter = RateLimiter(requests_per_minute)
        self._http = httpx.Client(timeout=timeout, transport=transport,
                                  headers={"Authorization": f"Bearer {key}"})

    def payload(self, conversation, temperature=None):
        for role, _ in conversation:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        body = {"model": self.model,
                "messages": [{"role": r, "content": t} for r, t in conversation]}
        body.update(self.extra_params)
        if temperature is not None:
            body["temperature"] = temperature
        return body

    def send(self, conversation, *, temperature=None, tag=None):
        self.limiter.acquire()
        try:
            resp = self._http.post(self.url, json=self.payload(conversation, temperature))
        except httpx.HTTPError as exc:
            raise ClientError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed response: {resp.text[:200]}") from exc

    def close(self):
        self._http.close()


class ScriptedClient:
    """Replays per-problem fixture transcripts.

    Each problem id maps to an ordered list of entries
    ``{"expect_substring": ..., "reply": ...}``; an entry with ``"error"``
    instead of ``"reply"`` simulates a transport failure.  Calls are routed
    by the ``tag`` keyword, which the distiller sets to the problem id.
    """

    def __init__(self, scripts: Dict[str, List[dict]], strict: bool = True):
        self.scripts = {k: list(v) for k, v in scripts.items()}
        self.strict = strict
        self._cursor: Dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_dir(cls, path, strict: bool = True) -> "ScriptedClient":
        scripts = {}
        for f in sorted(Path(path).glob("*.json")):
            entries = json.loads(f.read_text(encoding="utf-8"))
            if isinstance(entries, dict):
                scripts[str(entries["id"])] = entries["entries"]
            else:
                scripts[f.stem] = entries
        return cls(scripts, strict=strict)

    def calls(self, tag) -> int:
        return self._cursor.get(tag, 0)

    def send(self, conversation, *, temperature=None, tag=None):
        if tag not in self.scripts:
            raise ScriptExhausted(f"no script for {tag!r}")
        with self._lock:
            i = self._cursor.get(tag, 0)
            self._cursor[tag] = i + 1
        entries = self.scripts[tag]
        if i >= len(entries):
            raise ScriptExhausted(f"script for {tag!r} has only {len(entries)} entries")
        entry = entries[i]
        expect = entry.get("expect_substring")
        last_user = next((t for r, t in reversed(conversation) if r == "user"), "")
        if self.strict and expect and expect not in last_user:
            raise ScriptMismatch(f"{tag} entry {i}: expected {expect!r} in {last_user[:80]!r}")
        if "error" in entry:
            raise ClientError(entry["error"])
        return entry["reply"]
