"""Deterministic scriptable provider for all testing.

Unscripted calls synthesize a schema-valid answer by reading the format
directive out of the prompt, so end-to-end runs exercise the happy path
without canned fixtures. Fault injection (transient failures, malformed
output, latency) is drawn from a stream seeded per (job, attempt), which
makes transcripts reproducible under any concurrency interleaving.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field

from ..clock import Clock, RealClock
from . import ProviderError, ProviderResult, RequestContext, Usage

# Outcome kinds a script can enqueue for one job.
OK = "ok"
MALFORMED = "malformed"


@dataclass(frozen=True)
class ScriptedOutcome:
    kind: str  # ok | malformed | rate_limit | transient | fatal
    text: str = ""
    retry_after: float | None = None
    detail: str = "scripted"


@dataclass
class MockScript:
    """Per-job outcome sequences plus defaults for everything unscripted."""

    response_map: dict[tuple[str, str], list[ScriptedOutcome]] = field(default_factory=dict)
    failure_rate: float = 0.0
    malformed_rate: float = 0.0
    latency: float = 0.0
    latency_jitter: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("failure_rate out of [0,1]")
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ValueError("malformed_rate out of [0,1]")
        for key, outcomes in self.response_map.items():
            if not outcomes:
                raise ValueError(f"empty outcome sequence for {key}")


_SINGLE = re.compile(r"answer: exactly one of: (.+)")
_MULTI = re.compile(r"answer: one or more of: (.+?) \(separate")
_LIKERT = re.compile(r"answer: an integer from (-?\d+) to (-?\d+)")
_NUMERIC = re.compile(r"answer: a single number between (\S+) and (\S+)")

_PROSE = (
    "Let me consider this as the person described.",
    "Thinking it through briefly:",
    "Here is my response.",
)

_MALFORMED_SHAPES = (
    "I would rather not commit to a single option here.",
    "answer: {bad}\nreasoning: feels right",
    "It depends on many factors, honestly.",
)


def _call_seed(seed: int, key: tuple[str, str], attempt: int) -> int:
    digest = hashlib.sha256(f"{seed}|{key[0]}|{key[1]}|{attempt}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def synthesize_answer(user_text: str, rng: random.Random) -> str:
    """Produce a directive-compliant answer for the prompt's question."""
    m = _LIKERT.search(user_text)
    if m:
        return str(rng.randint(int(m.group(1)), int(m.group(2))))
    m = _MULTI.search(user_text)
    if m:
        options = [o.strip() for o in m.group(1).split("|")]
        count = rng.randint(1, len(options))
        return " | ".join(rng.sample(options, count))
    m = _SINGLE.search(user_text)
    if m:
        options = [o.strip() for o in m.group(1).split("|")]
        return rng.choice(options)
    m = _NUMERIC.search(user_text)
    if m:
        low, high = float(m.group(1)), float(m.group(2))
        return format(rng.uniform(low, high), ".4g")
    return rng.choice(("agree", "it depends on context", "no strong view"))


class MockProvider:
    def __init__(self, script: MockScript | None = None, seed: int = 0, clock: Clock | None = None):
        self.script = script or MockScript()
        self.script.validate()
        self.seed = seed
        self.clock = clock or RealClock()
        self._attempts: dict[tuple[str, str], int] = {}
        # transcript of (virtual time, job key, attempt) per dispatch
        self.calls: list[tuple[float, tuple[str, str], int]] = []

    def _next_attempt(self, key: tuple[str, str]) -> int:
        attempt = self._attempts.get(key, 0)
        self._attempts[key] = attempt + 1
        return attempt

    async def complete(self, payload, context: RequestContext | None = None) -> ProviderResult:
        key = (context.agent_id, context.question_id) if context else ("", "")
        attempt = self._next_attempt(key)
        self.calls.append((self.clock.now(), key, attempt))
        rng = random.Random(_call_seed(self.seed, key, attempt))

        scripted = self.script.response_map.get(key)
        if scripted is not None:
            outcome = scripted[min(attempt, len(scripted) - 1)]
            return await self._apply(outcome, payload, rng)

        if self.script.latency > 0:
            jitter = rng.uniform(0, self.script.latency_jitter)
            await self.clock.sleep(self.script.latency + jitter)
        if rng.random() < self.script.failure_rate:
            raise ProviderError("transient", "injected transient failure")
        if rng.random() < self.script.malformed_rate:
            shape = rng.choice(_MALFORMED_SHAPES)
            text = shape.format(bad=rng.choice(("maybe?", "9999", "all of them")))
            return self._result(payload, text)
        answer = synthesize_answer(payload.user_text, rng)
        prose = rng.choice(_PROSE)
        text = f"{prose}\n```\nanswer: {answer}\nreasoning: consistent with my profile\n```"
        return self._result(payload, text)

    async def _apply(self, outcome: ScriptedOutcome, payload, rng: random.Random) -> ProviderResult:
        if self.script.latency > 0:
            await self.clock.sleep(self.script.latency)
        if outcome.kind == OK:
            text = outcome.text or (
                f"answer: {synthesize_answer(payload.user_text, rng)}\nreasoning: scripted"
            )
            return self._result(payload, text)
        if outcome.kind == MALFORMED:
            return self._result(payload, outcome.text or "no structured block here")
        raise ProviderError(outcome.kind, outcome.detail, retry_after=outcome.retry_after)

    def _result(self, payload, text: str) -> ProviderResult:
        usage = Usage(
            input_tokens=payload.estimated_tokens,
            output_tokens=max(1, len(text) // 4),
        )
        return ProviderResult(text=text, usage=usage, latency=self.script.latency)


def mock_script_from_mapping(mapping: dict) -> MockScript:
    """Build a script from a plain key-value tree (CLI --mock-script files)."""
    response_map: dict[tuple[str, str], list[ScriptedOutcome]] = {}
    for raw in mapping.get("scripted", []):
        key = (str(raw["agent_id"]), str(raw["question_id"]))
        outcomes = []
        for out in raw["outcomes"]:
            outcomes.append(
                ScriptedOutcome(
                    kind=str(out.get("kind", OK)),
                    text=str(out.get("text", "")),
                    retry_after=out.get("retry_after"),
                    detail=str(out.get("detail", "scripted")),
                )
            )
        response_map[key] = outcomes
    return MockScript(
        response_map=response_map,
        failure_rate=float(mapping.get("failure_rate", 0.0)),
        malformed_rate=float(mapping.get("malformed_rate", 0.0)),
        latency=float(mapping.get("latency", 0.0)),
        latency_jitter=float(mapping.get("latency_jitter", 0.0)),
    )
