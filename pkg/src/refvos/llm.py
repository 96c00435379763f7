"""Minimal chat-completion client for the reasoning endpoint.

The endpoint speaks the common chat-completion wire format: POST a JSON
body with ``model`` and ``messages``, read ``choices[0].message.content``.
The API key is taken from the ``REFVOS_API_KEY`` environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import requests

API_KEY_ENV = "REFVOS_API_KEY"


class EndpointError(RuntimeError):
    """The endpoint could not be reached or returned an unusable response."""


@dataclass(frozen=True)
class ReasonerConfig:
    """Decoding and transport settings shared by all endpoint calls."""

    endpoint_url: str = ""
    model: str = "llama-3-8b-instruct"
    temperature: float = 0.7
    top_p: float = 0.95
    top_k: int = 0
    retry_budget: int = 3
    offline: bool = False
    send_top_k: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")

    @property
    def usable(self) -> bool:
        return bool(self.endpoint_url) and not self.offline


class ChatClient:
    """Stateless wrapper around one chat-completion endpoint.

    A single client may be used from several threads; each call opens its
    own connection. ``post`` is injectable for tests.
    """

    def __init__(self, config: ReasonerConfig, post: Callable | None = None):
        self.config = config
        self._post = post or requests.post

    def complete(self, prompt: str, system: str | None = None) -> str:
        cfg = self.config
        if not cfg.endpoint_url:
            raise EndpointError("no endpoint configured")
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        payload = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
        }
        if cfg.send_top_k:
            payload["top_k"] = cfg.top_k
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._post(cfg.endpoint_url, json=payload, headers=headers, timeout=60)
        except Exception as exc:  # noqa: BLE001 - network failures vary by stack
            raise EndpointError(f"endpoint request failed: {exc}") from exc
        status = getattr(resp, "status_code", 200)
        if status != 200:
            raise EndpointError(f"endpoint returned status {status}")
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001
            raise EndpointError(f"malformed endpoint response: {exc}") from exc
        if not isinstance(content, str) or not content.strip():
            raise EndpointError("endpoint returned empty content")
        return content
