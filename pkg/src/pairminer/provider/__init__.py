"""Provider gateway: completions, embeddings, caching, retries, mocks."""

from .cache import ResponseCache
from .gateway import ProviderGateway, RetryPolicy
from .mock import MockChatBackend, MockEmbedderBackend, MockRule
from .types import (
    CacheKey,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    TokenUsage,
    compute_cache_key,
    compute_embed_key,
)

__all__ = [
    "CacheKey",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "MockChatBackend",
    "MockEmbedderBackend",
    "MockRule",
    "ProviderGateway",
    "ResponseCache",
    "RetryPolicy",
    "TokenUsage",
    "compute_cache_key",
    "compute_embed_key",
]
