"""On-disk session store with per-session write locks and a TTL."""

from __future__ import annotations

import json
import threading
import time
import uuid
from pathlib import Path


class SessionNotFound(KeyError):
    pass


class SessionStore:
    """Sessions persist as one JSON file each so the service survives restarts."""

    def __init__(self, directory: str | Path, ttl_seconds: float = 24 * 3600):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.ttl_seconds = ttl_seconds
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.purge_expired()

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.json"

    def new_id(self) -> str:
        return uuid.uuid4().hex

    def lock(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def save(self, session: dict) -> None:
        path = self._path(session["session_id"])
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(session, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def load(self, session_id: str) -> dict:
        path = self._path(session_id)
        if not path.exists():
            raise SessionNotFound(session_id)
        session = json.loads(path.read_text(encoding="utf-8"))
        if time.time() - session["created_at"] > self.ttl_seconds:
            self.delete(session_id)
            raise SessionNotFound(session_id)
        return session

    def delete(self, session_id: str) -> None:
        path = self._path(session_id)
        if not path.exists():
            raise SessionNotFound(session_id)
        path.unlink()
        with self._guard:
            self._locks.pop(session_id, None)

    def purge_expired(self) -> int:
        removed = 0
        cutoff = time.time() - self.ttl_seconds
        for path in self.directory.glob("*.json"):
            try:
                created = json.loads(path.read_text(encoding="utf-8")).get("created_at", 0)
            except (json.JSONDecodeError, OSError):
                created = 0
            if created < cutoff:
                path.unlink(missing_ok=True)
                removed += 1
        return removed
