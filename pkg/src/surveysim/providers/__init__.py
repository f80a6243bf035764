"""Pluggable chat-completion boundary.

A provider takes one prompt payload and returns the raw completion text
plus usage, or raises a ProviderError of exactly one kind. The request
context (job identity and attempt) exists so the scriptable mock can key
fault injection per job; real adapters ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

RATE_LIMIT = "rate_limit"
TRANSIENT = "transient"
FATAL = "fatal"

ERROR_KINDS = (RATE_LIMIT, TRANSIENT, FATAL)


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens


@dataclass(frozen=True)
class ProviderResult:
    text: str
    usage: Usage
    latency: float = 0.0


class ProviderError(Exception):
    def __init__(self, kind: str, detail: str = "", retry_after: float | None = None):
        if kind not in ERROR_KINDS:
            raise ValueError(f"unknown provider error kind {kind!r}")
        if retry_after is not None and kind != RATE_LIMIT:
            raise ValueError("retry_after is only meaningful on rate_limit errors")
        self.kind = kind
        self.detail = detail
        self.retry_after = retry_after
        super().__init__(f"{kind}: {detail}" if detail else kind)


@dataclass(frozen=True)
class RequestContext:
    agent_id: str
    question_id: str
    attempt: int = 0


class Provider(Protocol):
    async def complete(
        self, payload, context: RequestContext | None = None
    ) -> ProviderResult: ...


class ProviderRegistry:
    """Flat name -> provider factory map; curation is left to users."""

    def __init__(self):
        self._factories: dict[str, object] = {}

    def register(self, provider_id: str, factory) -> None:
        self._factories[provider_id] = factory

    def create(self, provider_id: str, **kwargs) -> Provider:
        if provider_id not in self._factories:
            raise KeyError(f"unknown provider {provider_id!r}")
        return self._factories[provider_id](**kwargs)

    def known(self) -> list[str]:
        return sorted(self._factories)


from .mock import MockProvider, MockScript, ScriptedOutcome  # noqa: E402
from .openai_compat import OpenAICompatProvider  # noqa: E402

__all__ = [
    "ERROR_KINDS",
    "FATAL",
    "MockProvider",
    "MockScript",
    "OpenAICompatProvider",
    "Provider",
    "ProviderError",
    "ProviderRegistry",
    "ProviderResult",
    "RATE_LIMIT",
    "RequestContext",
    "ScriptedOutcome",
    "TRANSIENT",
    "Usage",
]
