"""Uniform gateway for completion and embedding calls.

Every pipeline stage goes through one gateway instance, which layers three
behaviors over a transport backend:

* content-addressed caching — a hit short-circuits the network entirely and
  returns byte-identical text;
* bounded retries with exponential backoff and jitter for transient faults;
* a single global in-flight semaphore, because real rate limits apply per
  account, not per stage.

Safe for concurrent use by many workers; callers need no external locking.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from typing import Protocol

from ..errors import (
    DimensionMismatchError,
    EmptyTextError,
    RetriesExhaustedError,
    TransientProviderError,
)
from .cache import ResponseCache
from .types import (
    CacheKey,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    TokenUsage,
    compute_cache_key,
    compute_embed_key,
)


class ChatBackend(Protocol):
    provider_id: str

    def complete_once(self, request: ChatRequest) -> tuple[str, TokenUsage]: ...


class EmbedderBackend(Protocol):
    model_name: str

    def embed_once(self, text: str) -> list[float]: ...


@dataclass(frozen=True)
class RetryPolicy:
    base_s: float = 1.0
    cap_s: float = 60.0
    attempts: int = 5

    def delay(self, attempt: int, rng: random.Random) -> float:
        # attempt is 1-based; jitter avoids synchronized retry storms
        backoff = min(self.cap_s, self.base_s * (2 ** (attempt - 1)))
        return backoff + rng.uniform(0.0, self.base_s)


class ProviderGateway:
    def __init__(
        self,
        chat_backend: ChatBackend,
        embed_backend: EmbedderBackend | None = None,
        cache: ResponseCache | None = None,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 4,
        vision_models: frozenset[str] | set[str] = frozenset(),
    ):
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.cache = cache
        self.retry = retry
        self.vision_models = frozenset(vision_models)
        self._in_flight = threading.BoundedSemaphore(max_in_flight)
        self._rng = random.Random()
        self._dimension_seen: int | None = None
        self._dim_lock = threading.Lock()

    # -- completions -------------------------------------------------------

    def cache_key(self, request: ChatRequest) -> CacheKey:
        return compute_cache_key(request)

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate(self.vision_models)
        key = compute_cache_key(request)
        if self.cache is not None:
            hit = self.cache.get(key.digest)
            if hit is not None:
                stored = hit["response"]
                return ChatResponse(
                    text=stored["text"],
                    usage=TokenUsage(
                        prompt_tokens=stored.get("prompt_tokens", 0),
                        completion_tokens=stored.get("completion_tokens", 0),
                    ),
                    provider_id=stored.get("provider_id", ""),
                    from_cache=True,
                    attempts=0,
                )

        text, usage, attempts = self._with_retries(
            lambda: self.chat_backend.complete_once(request)
        )
        response = ChatResponse(
            text=text,
            usage=usage,
            provider_id=getattr(self.chat_backend, "provider_id", ""),
            from_cache=False,
            attempts=attempts,
        )
        if self.cache is not None:
            self.cache.put(key.digest, _chat_payload(request, response))
        return response

    # -- embeddings ----------------------------------------------------------

    def embed(self, text: str) -> EmbeddingVector:
        if self.embed_backend is None:
            raise RuntimeError("no embedding backend configured")
        if not text.strip():
            raise EmptyTextError("cannot embed empty text")
        model = self.embed_backend.model_name
        key = compute_embed_key(model, text)
        if self.cache is not None:
            hit = self.cache.get(key.digest)
            if hit is not None:
                values = tuple(float(v) for v in hit["vector"])
                return self._checked_vector(values, model)

        values_list, _usage, _attempts = self._with_retries(
            lambda: (self.embed_backend.embed_once(text), None)
        )
        values = tuple(float(v) for v in values_list)
        vector = self._checked_vector(values, model)
        if self.cache is not None:
            self.cache.put(
                key.digest,
                {
                    "kind": "embed",
                    "request": {"model_name": model, "chars": len(text)},
                    "vector": list(values),
                },
            )
        return vector

    def _checked_vector(self, values: tuple[float, ...], model: str) -> EmbeddingVector:
        with self._dim_lock:
            if self._dimension_seen is None:
                self._dimension_seen = len(values)
            elif self._dimension_seen != len(values):
                raise DimensionMismatchError(
                    f"embedding dimension {len(values)} != {self._dimension_seen} "
                    "seen earlier in this run"
                )
        return EmbeddingVector(values=values, dimension=len(values), model_name=model)

    # -- retry loop ----------------------------------------------------------

    def _with_retries(self, call):
        last: Exception | None = None
        for attempt in range(1, self.retry.attempts + 1):
            try:
                with self._in_flight:
                    result = call()
                if isinstance(result, tuple) and len(result) == 2:
                    payload, usage = result
                else:  # pragma: no cover - defensive
                    payload, usage = result, None
                return payload, usage or TokenUsage(), attempt
            except TransientProviderError as exc:
                last = exc
                if attempt < self.retry.attempts:
                    time.sleep(self.retry.delay(attempt, self._rng))
        raise RetriesExhaustedError(
            f"gave up after {self.retry.attempts} attempts: {last}", last_error=last
        )


def _chat_payload(request: ChatRequest, response: ChatResponse) -> dict:
    import hashlib

    return {
        "kind": "chat",
        "request": {
            "model_name": request.model_name,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "temperature": request.temperature,
            "image_sha256": [
                hashlib.sha256(img).hexdigest() for img in request.images
            ],
        },
        "response": {
            "text": response.text,
            "prompt_tokens": response.usage.prompt_tokens,
            "completion_tokens": response.usage.completion_tokens,
            "provider_id": response.provider_id,
        },
    }
