"""Template-driven chat-completion client with retries and an exchange log."""
from __future__ import annotations

import copy
import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import requests

from .. import _rng

DEFAULT_BODY = {"model": "{{model}}", "messages": [{"role": "user", "content": "{{prompt}}"}]}
DEFAULT_RESPONSE_PATH = ("choices", 0, "message", "content")


class EndpointError(RuntimeError):
    def __init__(self, message: str, attempts: list[dict] | None = None, body: str | None = None):
        super().__init__(message)
        self.attempts = attempts or []
        self.body = body


class ResponseSchemaError(EndpointError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    token_env: str = "OPENAI_API_KEY"
    body_template: Mapping[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_BODY))
    response_path: tuple = DEFAULT_RESPONSE_PATH
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    # decoding options merged into the request body as-is
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        path = self.response_path
        if isinstance(path, str):
            path = tuple(int(p) if p.isdigit() else p for p in path.split("."))
        object.__setattr__(self, "response_path", tuple(path))

    @classmethod
    def from_json(cls, obj: Mapping) -> "EndpointConfig":
        kw = dict(obj)
        if "response_path" in kw and isinstance(kw["response_path"], list):
            kw["response_path"] = tuple(kw["response_path"])
        return cls(**kw)

    def token(self) -> str:
        value = os.environ.get(self.token_env)
        if not value:
            raise EndpointError(f"environment variable {self.token_env} is not set")
        return value

    def render_body(self, prompt: str) -> dict:
        def fill(node):
            if isinstance(node, str):
                return node.replace("{{model}}", self.model).replace("{{prompt}}", prompt)
            if isinstance(node, list):
                return [fill(v) for v in node]
            if isinstance(node, dict):
                return {k: fill(v) for k, v in node.items()}
            return node
        body = fill(copy.deepcopy(dict(self.body_template)))
        body.update(copy.deepcopy(dict(self.options)))
        return body


class ExchangeLog:
    """Append-only JSONL log of every request/response attempt."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: Mapping) -> None:
        line = json.dumps(entry, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(x) for x in self.path.read_text(encoding="utf-8").splitlines() if x.strip()]


def _extract(obj, path):
    for key in path:
        obj = obj[key]
    if not isinstance(obj, str):
        raise TypeError("completion is not a string")
    return obj


def _transient(status: int) -> bool:
    return status == 429 or status >= 500


def chat_complete(cfg: EndpointConfig, prompt: str, rng_seed: int = 0,
                  log: ExchangeLog | None = None, exchange_id: str = "",
                  session: requests.Session | None = None,
                  sleep: Callable[[float], None] = time.sleep) -> str:
    """POST one single-turn exchange and return the completion text.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff and jitter. Each attempt is logged before the call returns.
    """
    token = cfg.token()
    body = cfg.render_body(prompt)
    headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}
    http = session or requests
    attempts: list[dict] = []
    for attempt in range(cfg.max_retries + 1):
        entry = {"exchange_id": exchange_id, "attempt": attempt + 1, "request": body,
                 "sent_at": datetime.now(timezone.utc).isoformat()}
        status, text, error = None, None, None
        try:
            resp = http.post(cfg.base_url, json=body, headers=headers, timeout=cfg.timeout)
            status, text = resp.status_code, resp.text
        except requests.RequestException as exc:
            error = f"{type(exc).__name__}: {exc}"
        entry.update({"status": status, "response": text, "error": error,
                      "received_at": datetime.now(timezone.utc).isoformat()})
        attempts.append(entry)
        if log is not None:
            log.append(entry)

        if status is not None and status < 400:
            try:
                return _extract(json.loads(text), cfg.response_path)
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ResponseSchemaError(
                    f"response has no completion at {list(cfg.response_path)}: {exc}",
                    attempts, text) from None
        if status is not None and not _transient(status):
            raise EndpointError(f"HTTP {status} from {cfg.base_url}", attempts, text)
        if attempt < cfg.max_retries:
            jitter = _rng.substream(rng_seed, attempt).random()
            sleep(cfg.backoff_base * (2 ** attempt) * (0.5 + jitter))
    raise EndpointError(f"request failed after {cfg.max_retries + 1} attempts", attempts)
