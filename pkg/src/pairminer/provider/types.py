"""Request/response types shared by every provider backend."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from ..errors import InvalidRequestError


@dataclass(frozen=True)
class ChatRequest:
    """A single text- or vision-completion call.

    ``temperature`` stays at 0 for every pipeline stage so that a scripted
    provider makes the whole run a pure function of its inputs.
    """

    model_name: str
    user_text: str
    system_text: str | None = None
    images: tuple[bytes, ...] = ()
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def validate(self, vision_models: frozenset[str] = frozenset()) -> None:
        if not self.user_text:
            raise InvalidRequestError("user_text must be non-empty")
        if not (0.0 <= self.temperature <= 1.0):
            raise InvalidRequestError(
                f"temperature {self.temperature} outside [0, 1]"
            )
        if self.max_output_tokens <= 0:
            raise InvalidRequestError("max_output_tokens must be positive")
        if self.images and self.model_name not in vision_models:
            raise InvalidRequestError(
                f"model {self.model_name!r} is not registered as vision-capable "
                "but the request carries images"
            )

    @property
    def combined_text(self) -> str:
        """System and user text as the mock matchers see them."""
        if self.system_text:
            return self.system_text + "\n" + self.user_text
        return self.user_text


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    """Provider output, byte-for-byte as returned.

    ``attempts`` counts transport calls actually made (0 on a cache hit).
    """

    text: str
    usage: TokenUsage = TokenUsage()
    provider_id: str = ""
    from_cache: bool = False
    attempts: int = 1


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dimension: int
    model_name: str

    def __post_init__(self) -> None:
        if len(self.values) != self.dimension:
            raise InvalidRequestError(
                f"vector length {len(self.values)} != dimension {self.dimension}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidRequestError("embedding contains non-finite values")


@dataclass(frozen=True)
class CacheKey:
    digest: str


def _update_framed(h: "hashlib._Hash", part: bytes) -> None:
    # Length framing keeps adjacent fields from colliding.
    h.update(f"{len(part)}:".encode("ascii"))
    h.update(part)


def compute_cache_key(request: ChatRequest) -> CacheKey:
    """Content-addressed digest over everything that determines the reply."""
    h = hashlib.sha256()
    _update_framed(h, b"chat")
    _update_framed(h, request.model_name.encode("utf-8"))
    _update_framed(h, (request.system_text or "").encode("utf-8"))
    _update_framed(h, request.user_text.encode("utf-8"))
    for image in request.images:
        _update_framed(h, image)
    _update_framed(h, repr(request.temperature).encode("ascii"))
    return CacheKey(digest=h.hexdigest())


def compute_embed_key(model_name: str, text: str) -> CacheKey:
    h = hashlib.sha256()
    _update_framed(h, b"embed")
    _update_framed(h, model_name.encode("utf-8"))
    _update_framed(h, text.encode("utf-8"))
    return CacheKey(digest=h.hexdigest())
