"""OpenAI-compatible HTTP backends for live runs."""

from __future__ import annotations

import base64
import os

import requests

from ..errors import CredentialMissingError, PairminerError, TransientProviderError
from .types import ChatRequest, TokenUsage


def _api_key(credential_env: str) -> str:
    key = os.environ.get(credential_env, "")
    if not key:
        raise CredentialMissingError(
            f"environment variable {credential_env!r} is not set"
        )
    return key


def _raise_for_status(resp: requests.Response) -> None:
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransientProviderError(f"HTTP {resp.status_code}: {resp.text[:300]}")
    if resp.status_code >= 400:
        raise PairminerError(f"HTTP {resp.status_code}: {resp.text[:300]}")


class HttpChatBackend:
    def __init__(self, endpoint: str, credential_env: str,
                 provider_id: str = "openai", timeout_s: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.credential_env = credential_env
        self.provider_id = provider_id
        self.timeout_s = timeout_s
        _api_key(credential_env)  # fail fast on missing credentials

    def complete_once(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        messages: list[dict] = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        if request.images:
            content: list[dict] = [{"type": "text", "text": request.user_text}]
            for image in request.images:
                encoded = base64.b64encode(image).decode("ascii")
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{encoded}"},
                    }
                )
            messages.append({"role": "user", "content": content})
        else:
            messages.append({"role": "user", "content": request.user_text})

        payload = {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {_api_key(self.credential_env)}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientProviderError(str(exc)) from exc
        _raise_for_status(resp)
        body = resp.json()
        usage = body.get("usage", {})
        return (
            body["choices"][0]["message"]["content"],
            TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


class HttpEmbedderBackend:
    def __init__(self, endpoint: str, credential_env: str, model_name: str,
                 timeout_s: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.credential_env = credential_env
        self.model_name = model_name
        self.timeout_s = timeout_s
        _api_key(credential_env)

    def embed_once(self, text: str) -> list[float]:
        try:
            resp = requests.post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model_name, "input": text},
                headers={"Authorization": f"Bearer {_api_key(self.credential_env)}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientProviderError(str(exc)) from exc
        _raise_for_status(resp)
        return [float(v) for v in resp.json()["data"][0]["embedding"]]
