"""Adapter for OpenAI-compatible chat-completion HTTP services.

Maps every wire outcome onto exactly one ProviderResult or ProviderError
kind: 429 -> rate_limit (honoring Retry-After), 5xx and transport faults ->
transient, auth/validation failures -> fatal. Credentials come from an
environment variable named in the adapter config and are never persisted
with run data.
"""

from __future__ import annotations

import os

import httpx

from . import ProviderError, ProviderResult, RequestContext, Usage

DEFAULT_BASE_URL = "https://api.openai.com/v1"


class OpenAICompatProvider:
    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self._client = httpx.AsyncClient(timeout=timeout, transport=transport)

    async def aclose(self) -> None:
        await self._client.aclose()

    async def complete(self, payload, context: RequestContext | None = None) -> ProviderResult:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise ProviderError("fatal", f"missing credentials ({self.api_key_env} unset)")
        body = {
            "model": payload.model_params.model_name,
            "messages": [
                {"role": "system", "content": payload.system_text},
                {"role": "user", "content": payload.user_text},
            ],
            "temperature": payload.model_params.temperature,
            "top_p": payload.model_params.top_p,
            "max_tokens": payload.model_params.max_output_tokens,
        }
        try:
            response = await self._client.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
            )
        except httpx.TimeoutException as exc:
            raise ProviderError("transient", f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise ProviderError("transient", f"transport failure: {exc}") from exc

        if response.status_code == 429:
            retry_after = _parse_retry_after(response.headers.get("retry-after"))
            raise ProviderError("rate_limit", "rate limited", retry_after=retry_after)
        if response.status_code in (401, 403):
            raise ProviderError("fatal", f"authentication failed ({response.status_code})")
        if 400 <= response.status_code < 500:
            raise ProviderError("fatal", f"request rejected ({response.status_code}): {response.text[:200]}")
        if response.status_code >= 500:
            raise ProviderError("transient", f"server error ({response.status_code})")

        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
            usage_raw = data.get("usage", {})
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError("transient", f"malformed completion body: {exc}") from exc
        usage = Usage(
            input_tokens=int(usage_raw.get("prompt_tokens", 0)),
            output_tokens=int(usage_raw.get("completion_tokens", 0)),
        )
        return ProviderResult(text=text, usage=usage)


def _parse_retry_after(value: str | None) -> float | None:
    if not value:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None
