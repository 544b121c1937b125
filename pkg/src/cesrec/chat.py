"""Minimal chat-endpoint client shared by the simulator and the constructor.

Protocol: POST {"messages": [{"role", "content"}], "temperature",
"max_tokens"} -> {"text"}. Bearer token read from CESREC_CHAT_TOKEN.
"""

from __future__ import annotations

import logging
import os
import time

log = logging.getLogger(__name__)

CHAT_TOKEN_ENV = "CESREC_CHAT_TOKEN"


class ChatError(RuntimeError):
    pass


class ChatClient:
    def __init__(
        self,
        endpoint: str,
        temperature: float = 0.2,
        max_tokens: int = 512,
        timeout: float = 60.0,
        max_attempts: int = 3,
    ):
        self.endpoint = endpoint
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.max_attempts = max_attempts

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(CHAT_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, messages: list[dict[str, str]]) -> str:
        import requests

        payload = {
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        last_err: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout
                )
                resp.raise_for_status()
                return str(resp.json()["text"])
            except Exception as err:  # noqa: BLE001 - retry any transport failure
                last_err = err
                if attempt < self.max_attempts - 1:
                    time.sleep(2.0**attempt)
        raise ChatError(f"chat endpoint failed after {self.max_attempts} attempts: {last_err}")
