"""Deterministic mock backends driven by scripted rule files.

A script is a list of rules checked in order; the first rule whose matchers
all hold answers the request.  A request no rule covers raises
``FixtureMissError`` — a silent default answer would hide test bugs.

Besides literal canned text, rules support answer modes that derive the
response from fixture ground truth carried in the rule itself:

``image_text``
    echo the request's decoded image payload (``empty`` for blank pages).
``line_bank``
    return the indices of request lines whose text appears in a bank of
    known boundary lines, as a fenced JSON list.
``item_bank``
    return the bank items whose needle token occurs in the request text,
    as a fenced JSON array in order of appearance.
``pair_bank``
    answer True iff both needles of some banked pair occur in the request.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import FixtureMissError, TransientProviderError
from .types import ChatRequest, TokenUsage, compute_cache_key

_MODES = {"literal", "image_text", "line_bank", "item_bank", "pair_bank"}

_INDEXED_LINE = re.compile(r"^(\d+)\| (.*)$", re.MULTILINE)


@dataclass
class MockRule:
    name: str
    contains: tuple[str, ...] = ()
    image_text_contains: tuple[str, ...] = ()
    digest: str | None = None
    model: str | None = None
    mode: str = "literal"
    response: str | None = None
    responses: tuple[str, ...] = ()
    fail_times: int = 0
    bank: Any = None
    # mutable call-state, guarded by the backend lock
    failures_served: int = field(default=0, compare=False)
    sequence_index: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"rule {self.name!r}: unknown mode {self.mode!r}")
        if self.mode == "literal" and self.response is None and not self.responses:
            raise ValueError(f"rule {self.name!r}: literal rule needs a response")

    @classmethod
    def from_dict(cls, raw: dict[str, Any], index: int) -> "MockRule":
        def as_tuple(value: Any) -> tuple[str, ...]:
            if value is None:
                return ()
            if isinstance(value, str):
                return (value,)
            return tuple(value)

        return cls(
            name=raw.get("name", f"rule-{index}"),
            contains=as_tuple(raw.get("contains")),
            image_text_contains=as_tuple(raw.get("image_text_contains")),
            digest=raw.get("digest"),
            model=raw.get("model"),
            mode=raw.get("mode", "literal"),
            response=raw.get("response"),
            responses=as_tuple(raw.get("responses")),
            fail_times=int(raw.get("fail_times", 0)),
            bank=raw.get("bank"),
        )

    def matches(self, request: ChatRequest, image_text: str, digest: str) -> bool:
        if self.model is not None and request.model_name != self.model:
            return False
        if self.digest is not None and digest != self.digest:
            return False
        text = request.combined_text
        if any(needle not in text for needle in self.contains):
            return False
        if any(needle not in image_text for needle in self.image_text_contains):
            return False
        return True


def _decode_images(request: ChatRequest) -> str:
    return "\n".join(img.decode("utf-8", errors="replace") for img in request.images)


class MockChatBackend:
    """Scripted completion backend with a thread-safe call log."""

    def __init__(self, rules: list[MockRule], provider_id: str = "mock"):
        self.rules = rules
        self.provider_id = provider_id
        self.calls: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path | str, provider_id: str = "mock") -> "MockChatBackend":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        entries = raw["rules"] if isinstance(raw, dict) else raw
        rules = [MockRule.from_dict(entry, i) for i, entry in enumerate(entries)]
        return cls(rules, provider_id=provider_id)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def calls_matching(self, rule_name: str) -> list[dict[str, Any]]:
        return [c for c in self.calls if c["rule"] == rule_name]

    def complete_once(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        image_text = _decode_images(request)
        digest = compute_cache_key(request).digest
        with self._lock:
            rule = next(
                (r for r in self.rules if r.matches(request, image_text, digest)),
                None,
            )
            if rule is None:
                head = request.user_text[:200].replace("\n", "\\n")
                raise FixtureMissError(
                    f"no mock rule covers request (model={request.model_name!r}, "
                    f"images={len(request.images)}, text starts: {head!r})"
                )
            self.calls.append(
                {
                    "model": request.model_name,
                    "rule": rule.name,
                    "images": len(request.images),
                    "digest": digest,
                    "user_text": request.user_text,
                }
            )
            if rule.failures_served < rule.fail_times:
                rule.failures_served += 1
                raise TransientProviderError(
                    f"scripted failure {rule.failures_served}/{rule.fail_times} "
                    f"for rule {rule.name!r}"
                )
            text = self._answer(rule, request, image_text)
        usage = TokenUsage(
            prompt_tokens=len(request.combined_text) // 4,
            completion_tokens=len(text) // 4,
        )
        return text, usage

    def _answer(self, rule: MockRule, request: ChatRequest, image_text: str) -> str:
        if rule.mode == "literal":
            if rule.responses:
                idx = min(rule.sequence_index, len(rule.responses) - 1)
                rule.sequence_index += 1
                return rule.responses[idx]
            assert rule.response is not None
            return rule.response
        if rule.mode == "image_text":
            stripped = image_text.strip()
            return stripped if stripped else "empty"
        if rule.mode == "line_bank":
            bank = set(rule.bank or [])
            hits = sorted(
                int(m.group(1))
                for m in _INDEXED_LINE.finditer(request.user_text)
                if m.group(2) in bank
            )
            return (
                "Scanned the page for structural beginnings.\n"
                "```json\n" + json.dumps(hits) + "\n```"
            )
        if rule.mode == "item_bank":
            found: list[tuple[int, dict[str, Any]]] = []
            for entry in rule.bank or []:
                pos = request.user_text.find(entry["needle"])
                if pos >= 0:
                    found.append((pos, entry["item"]))
            found.sort(key=lambda pair: pair[0])
            items = [item for _, item in found]
            return (
                "Reviewed the content piece by piece.\n"
                "```json\n" + json.dumps(items, ensure_ascii=False, indent=1) + "\n```"
            )
        if rule.mode == "pair_bank":
            text = request.combined_text
            valid = any(
                p_needle in text and s_needle in text
                for p_needle, s_needle in (rule.bank or [])
            )
            verdict = "True" if valid else "False"
            return f"Checked the pair against its statement.\n[Begin]{verdict}[End]"
        raise AssertionError(f"unhandled mode {rule.mode}")


_TOKEN = re.compile(r"[a-z0-9]+")


class MockEmbedderBackend:
    """Seeded hashed bag-of-words projection to a fixed dimension.

    Texts sharing more tokens land closer in cosine distance; the projection
    is a pure function of (seed, text), bit-stable across platforms.
    """

    def __init__(self, dimension: int = 256, seed: int = 1234,
                 model_name: str = "mock-embedder"):
        self.dimension = dimension
        self.seed = seed
        self.model_name = model_name
        self.calls: list[str] = []
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def embed_once(self, text: str) -> list[float]:
        with self._lock:
            self.calls.append(text[:80])
        vec = [0.0] * self.dimension
        for token in _TOKEN.findall(text.lower()):
            h = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            idx = int.from_bytes(h[:8], "big") % self.dimension
            sign = 1.0 if h[8] % 2 == 0 else -1.0
            vec[idx] += sign
        norm = math.sqrt(sum(v * v for v in vec))
        if norm > 0.0:
            vec = [v / norm for v in vec]
        return vec
