"""Run configuration: one human-editable YAML file per run.

The parsed configuration is the artifact of record — its digest gates
resumption, and every tunable (models, renderer commands, budgets, limits,
paths) lives here rather than in code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .provider import (
    MockChatBackend,
    MockEmbedderBackend,
    ProviderGateway,
    ResponseCache,
    RetryPolicy,
)


@dataclass(frozen=True)
class RetryConfig:
    base_s: float = 1.0
    cap_s: float = 60.0
    attempts: int = 5


@dataclass(frozen=True)
class ChatConfig:
    kind: str = "mock"                  # mock | openai
    endpoint: str = ""
    credential_env: str = ""
    script: str = ""                    # mock rule file
    provider_id: str = "mock"


@dataclass(frozen=True)
class EmbeddingConfig:
    kind: str = "mock"                  # mock | openai
    model_name: str = "mock-embedder"
    dimension: int = 256
    seed: int = 1234
    endpoint: str = ""
    credential_env: str = ""


@dataclass(frozen=True)
class ModelsConfig:
    filter: str = "gpt-4o"
    vision: str = "gpt-4o"
    boundary: str = "gpt-4o"
    extract: str = "gpt-4o"
    verify: str = "gpt-4o"
    judge: str = "gpt-4o-mini"
    respond: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProviderSection:
    cache_dir: str = "cache"
    max_in_flight: int = 4
    retry: RetryConfig = RetryConfig()
    chat: ChatConfig = ChatConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    models: ModelsConfig = ModelsConfig()
    vision_models: tuple[str, ...] = ("gpt-4o",)
    embed_char_cap: int = 4000


@dataclass(frozen=True)
class RenderSection:
    dpi: int = 200
    min_dpi: int = 72
    commands: dict = field(default_factory=lambda: {"other": "passthrough"})


@dataclass(frozen=True)
class SegmentSection:
    max_tokens: int = 3000


@dataclass(frozen=True)
class ExtractSection:
    patterns: str = ""                  # empty = packaged default
    llm_double_check: bool = False


@dataclass(frozen=True)
class MatchSection:
    k_semantic: int = 4
    candidate_limit: int = 4
    enable_numerical: bool = True
    enable_semantic: bool = True


@dataclass(frozen=True)
class Config:
    catalog: str
    work_dir: str
    keywords: tuple[str, ...] = ("problem", "question")
    concurrency: int = 4
    provider: ProviderSection = ProviderSection()
    render: RenderSection = RenderSection()
    segment: SegmentSection = SegmentSection()
    extract: ExtractSection = ExtractSection()
    match: MatchSection = MatchSection()
    base_dir: str = "."                 # directory the config file lives in

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_file(cls, path: Path | str) -> "Config":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent.resolve())

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> "Config":
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a mapping")
        if "catalog" not in raw:
            raise ConfigError("config is missing the required 'catalog' path")
        if "work_dir" not in raw:
            raise ConfigError("config is missing the required 'work_dir' path")
        try:
            config = cls(
                catalog=str(raw["catalog"]),
                work_dir=str(raw["work_dir"]),
                keywords=tuple(raw.get("keywords", ("problem", "question"))),
                concurrency=int(raw.get("concurrency", 4)),
                provider=_provider_section(raw.get("provider", {})),
                render=_render_section(raw.get("render", {})),
                segment=SegmentSection(
                    max_tokens=int(raw.get("segment", {}).get("max_tokens", 3000))
                ),
                extract=ExtractSection(
                    patterns=str(raw.get("extract", {}).get("patterns", "")),
                    llm_double_check=bool(
                        raw.get("extract", {}).get("llm_double_check", False)
                    ),
                ),
                match=_match_section(raw.get("match", {})),
                base_dir=str(base_dir),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration value: {exc}") from exc
        config.validate()
        return config

    # -- validation / digest -------------------------------------------------

    def validate(self) -> None:
        if not self.keywords:
            raise ConfigError("keywords must not be empty")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.segment.max_tokens < 64:
            raise ConfigError("segment.max_tokens must be >= 64")
        if self.render.dpi < self.render.min_dpi:
            raise ConfigError(
                f"render.dpi {self.render.dpi} below minimum {self.render.min_dpi}"
            )
        if self.provider.chat.kind not in ("mock", "openai"):
            raise ConfigError(f"unknown chat provider kind {self.provider.chat.kind!r}")
        if self.provider.embedding.kind not in ("mock", "openai"):
            raise ConfigError(
                f"unknown embedding provider kind {self.provider.embedding.kind!r}"
            )
        if self.provider.chat.kind == "mock" and not self.provider.chat.script:
            raise ConfigError("mock chat provider requires a script path")
        if self.match.k_semantic < 1:
            raise ConfigError("match.k_semantic must be >= 1")
        if self.match.candidate_limit < 1:
            raise ConfigError("match.candidate_limit must be >= 1")
        if not (self.match.enable_numerical or self.match.enable_semantic):
            raise ConfigError("at least one matching pathway must be enabled")

    def digest(self) -> str:
        """Canonical digest over parsed values; whitespace and comments in
        the YAML file do not count as drift."""
        canon = asdict(self)
        canon.pop("base_dir")
        blob = json.dumps(canon, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # -- resolved paths ------------------------------------------------------

    def resolve(self, path_value: str) -> Path:
        path = Path(path_value)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def catalog_path(self) -> Path:
        return self.resolve(self.catalog)

    @property
    def work_path(self) -> Path:
        return self.resolve(self.work_dir)

    @property
    def cache_path(self) -> Path:
        return self.resolve(self.provider.cache_dir)

    @property
    def patterns_path(self) -> Path | None:
        return self.resolve(self.extract.patterns) if self.extract.patterns else None

    # -- gateway construction -------------------------------------------------

    def build_gateway(self) -> ProviderGateway:
        provider = self.provider
        if provider.chat.kind == "mock":
            script = self.resolve(provider.chat.script)
            if not script.exists():
                raise ConfigError(f"mock script not found: {script}")
            chat_backend = MockChatBackend.from_file(
                script, provider_id=provider.chat.provider_id
            )
        else:
            from .provider.http import HttpChatBackend

            if not provider.chat.endpoint:
                raise ConfigError("chat provider endpoint is required")
            chat_backend = HttpChatBackend(
                endpoint=provider.chat.endpoint,
                credential_env=provider.chat.credential_env,
                provider_id=provider.chat.provider_id,
            )
        if provider.embedding.kind == "mock":
            embed_backend = MockEmbedderBackend(
                dimension=provider.embedding.dimension,
                seed=provider.embedding.seed,
                model_name=provider.embedding.model_name,
            )
        else:
            from .provider.http import HttpEmbedderBackend

            if not provider.embedding.endpoint:
                raise ConfigError("embedding provider endpoint is required")
            embed_backend = HttpEmbedderBackend(
                endpoint=provider.embedding.endpoint,
                credential_env=provider.embedding.credential_env,
                model_name=provider.embedding.model_name,
            )
        return ProviderGateway(
            chat_backend=chat_backend,
            embed_backend=embed_backend,
            cache=ResponseCache(self.cache_path),
            retry=RetryPolicy(
                base_s=provider.retry.base_s,
                cap_s=provider.retry.cap_s,
                attempts=provider.retry.attempts,
            ),
            max_in_flight=provider.max_in_flight,
            vision_models=frozenset(provider.vision_models),
        )


def _provider_section(raw: dict) -> ProviderSection:
    retry_raw = raw.get("retry", {})
    chat_raw = raw.get("chat", {})
    embed_raw = raw.get("embedding", {})
    models_raw = raw.get("models", {})
    return ProviderSection(
        cache_dir=str(raw.get("cache_dir", "cache")),
        max_in_flight=int(raw.get("max_in_flight", 4)),
        retry=RetryConfig(
            base_s=float(retry_raw.get("base_s", 1.0)),
            cap_s=float(retry_raw.get("cap_s", 60.0)),
            attempts=int(retry_raw.get("attempts", 5)),
        ),
        chat=ChatConfig(
            kind=str(chat_raw.get("kind", "mock")),
            endpoint=str(chat_raw.get("endpoint", "")),
            credential_env=str(chat_raw.get("credential_env", "")),
            script=str(chat_raw.get("script", "")),
            provider_id=str(chat_raw.get("provider_id", chat_raw.get("kind", "mock"))),
        ),
        embedding=EmbeddingConfig(
            kind=str(embed_raw.get("kind", "mock")),
            model_name=str(embed_raw.get("model_name", "mock-embedder")),
            dimension=int(embed_raw.get("dimension", 256)),
            seed=int(embed_raw.get("seed", 1234)),
            endpoint=str(embed_raw.get("endpoint", "")),
            credential_env=str(embed_raw.get("credential_env", "")),
        ),
        models=ModelsConfig(
            filter=str(models_raw.get("filter", "gpt-4o")),
            vision=str(models_raw.get("vision", "gpt-4o")),
            boundary=str(models_raw.get("boundary", "gpt-4o")),
            extract=str(models_raw.get("extract", "gpt-4o")),
            verify=str(models_raw.get("verify", "gpt-4o")),
            judge=str(models_raw.get("judge", "gpt-4o-mini")),
            respond=tuple(models_raw.get("respond", ())),
        ),
        vision_models=tuple(raw.get("vision_models", ("gpt-4o",))),
        embed_char_cap=int(raw.get("embed_char_cap", 4000)),
    )


def _render_section(raw: dict) -> RenderSection:
    commands = raw.get("commands", {"other": "passthrough"})
    if not isinstance(commands, dict):
        raise ConfigError("render.commands must map formats to command templates")
    return RenderSection(
        dpi=int(raw.get("dpi", 200)),
        min_dpi=int(raw.get("min_dpi", 72)),
        commands={str(k): str(v) for k, v in commands.items()},
    )


def _match_section(raw: dict) -> MatchSection:
    return MatchSection(
        k_semantic=int(raw.get("k_semantic", 4)),
        candidate_limit=int(raw.get("candidate_limit", 4)),
        enable_numerical=bool(raw.get("enable_numerical", True)),
        enable_semantic=bool(raw.get("enable_semantic", True)),
    )
