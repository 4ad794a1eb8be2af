"""Content-addressed on-disk response cache.

One JSON file per digest, holding the response verbatim plus enough request
metadata to audit what produced it.  Files are written atomically, so at most
one entry ever exists per key and replays are byte-identical.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any

from ..ioutil import atomic_write_text


class ResponseCache:
    def __init__(self, root: Path):
        self.root = Path(root)
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def get(self, digest: str) -> dict[str, Any] | None:
        path = self._path(digest)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def put(self, digest: str, payload: dict[str, Any]) -> None:
        # Writes are serialized; identical keys carry identical payloads, so
        # a concurrent duplicate write is harmless.
        with self._write_lock:
            self.root.mkdir(parents=True, exist_ok=True)
            atomic_write_text(
                self._path(digest),
                json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1),
            )

    def __contains__(self, digest: str) -> bool:
        return self._path(digest).exists()
