"""Prompt construction and answer parsing.

The response contract is a fenced key-value block with "answer" and
"reasoning" lines. Extraction is tolerant (prose around the block is
ignored) but validation against the answer schema is strict. The directive
wording is versioned and stored with every run so results stay auditable
across wording changes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .config import SimulationConfig
from .profiles import AgentProfile, default_profile_template, render_profile_prompt
from .survey import (
    LIKERT,
    MULTI_CHOICE,
    NUMERIC_RANGE,
    SINGLE_CHOICE,
    AnswerSchema,
    SurveyQuestion,
)

DIRECTIVE_VERSION = "kv-answer/1"

ROLE_FRAMING = (
    "You are a survey respondent. Answer every question in character, "
    "based only on the characteristics below."
)

MISSING_FIELD = "missing-field"
UNPARSABLE_VALUE = "unparsable-value"
OUT_OF_DOMAIN = "out-of-domain"


class FormatError(Exception):
    """A model response that violates the answer contract."""

    def __init__(self, kind: str, detail: str, raw: str):
        self.kind = kind
        self.detail = detail
        self.raw = raw
        super().__init__(f"{kind}: {detail}")


@dataclass(frozen=True)
class ModelParams:
    model_name: str
    temperature: float
    top_p: float
    max_output_tokens: int


@dataclass(frozen=True)
class PromptPayload:
    system_text: str
    user_text: str
    model_params: ModelParams
    estimated_tokens: int


@dataclass(frozen=True)
class ParsedAnswer:
    value: object
    raw: str
    reasoning: str = ""


def estimate_tokens(*texts: str) -> int:
    return math.ceil(sum(len(t) for t in texts) / 4)


def format_directive(schema: AnswerSchema) -> str:
    if schema.kind == SINGLE_CHOICE:
        value_rule = f"exactly one of: {' | '.join(schema.options)}"
    elif schema.kind == MULTI_CHOICE:
        value_rule = (
            f"one or more of: {' | '.join(schema.options)} "
            "(separate multiple choices with |)"
        )
    elif schema.kind == LIKERT:
        value_rule = f"an integer from {schema.scale[0]} to {schema.scale[1]}"
    elif schema.kind == NUMERIC_RANGE:
        value_rule = f"a single number between {schema.bounds[0]} and {schema.bounds[1]}"
    else:
        value_rule = "a short free-text response"
    return (
        "Reply with exactly this block:\n"
        "```\n"
        f"answer: {value_rule}\n"
        "reasoning: one sentence explaining your answer\n"
        "```"
    )


def build_prompt(
    profile: AgentProfile, question: SurveyQuestion, config: SimulationConfig
) -> PromptPayload:
    """Deterministic payload: persona system text plus question and directive."""
    persona = render_profile_prompt(
        profile, config.profile_schema, default_profile_template(config.profile_schema)
    )
    system_text = f"{ROLE_FRAMING}\n\n{persona}"
    parts = [question.text]
    if question.answer_instruction:
        parts.append(question.answer_instruction)
    parts.append(format_directive(question.answer_schema))
    user_text = "\n\n".join(parts)
    return PromptPayload(
        system_text=system_text,
        user_text=user_text,
        model_params=ModelParams(
            model_name=config.model_name,
            temperature=config.temperature,
            top_p=config.top_p,
            max_output_tokens=config.max_output_tokens,
        ),
        estimated_tokens=estimate_tokens(system_text, user_text),
    )


_ANSWER_LINE = re.compile(r"^\s*answer\s*[:=]\s*(.*?)\s*$", re.IGNORECASE | re.MULTILINE)
_REASONING_LINE = re.compile(r"^\s*reasoning\s*[:=]\s*(.*?)\s*$", re.IGNORECASE | re.MULTILINE)


def _match_option(raw_value: str, options: tuple[str, ...]) -> str | None:
    wanted = raw_value.strip().strip(".").casefold()
    for option in options:
        if option.casefold() == wanted:
            return option
    return None


def _validate_value(raw_value: str, schema: AnswerSchema, raw: str):
    if schema.kind == SINGLE_CHOICE:
        option = _match_option(raw_value, schema.options)
        if option is None:
            raise FormatError(OUT_OF_DOMAIN, f"{raw_value!r} is not an option", raw)
        return option
    if schema.kind == MULTI_CHOICE:
        parts = [p for p in re.split(r"[|,]", raw_value) if p.strip()]
        if not parts:
            raise FormatError(UNPARSABLE_VALUE, "no choices given", raw)
        chosen: list[str] = []
        for part in parts:
            option = _match_option(part, schema.options)
            if option is None:
                raise FormatError(OUT_OF_DOMAIN, f"{part.strip()!r} is not an option", raw)
            if option not in chosen:
                chosen.append(option)
        return chosen
    if schema.kind == LIKERT:
        try:
            value = int(raw_value.strip())
        except ValueError:
            raise FormatError(UNPARSABLE_VALUE, f"{raw_value!r} is not an integer", raw) from None
        low, high = schema.scale
        if not low <= value <= high:
            raise FormatError(OUT_OF_DOMAIN, f"{value} outside {low}..{high}", raw)
        return value
    if schema.kind == NUMERIC_RANGE:
        try:
            value = float(raw_value.strip())
        except ValueError:
            raise FormatError(UNPARSABLE_VALUE, f"{raw_value!r} is not a number", raw) from None
        low, high = schema.bounds
        if not low <= value <= high:
            raise FormatError(OUT_OF_DOMAIN, f"{value} outside [{low}, {high}]", raw)
        return value
    # free text
    if not raw_value.strip():
        raise FormatError(UNPARSABLE_VALUE, "empty free-text answer", raw)
    return raw_value.strip()


def parse_response(raw: str, schema: AnswerSchema) -> ParsedAnswer:
    """Extract and validate the structured block, ignoring surrounding prose.

    The last "answer:" line wins; models often restate their final answer
    after deliberation.
    """
    matches = _ANSWER_LINE.findall(raw or "")
    if not matches:
        raise FormatError(MISSING_FIELD, "no 'answer:' line found", raw or "")
    raw_value = matches[-1].strip().strip("`")
    value = _validate_value(raw_value, schema, raw)
    reasoning_matches = _REASONING_LINE.findall(raw)
    reasoning = reasoning_matches[-1].strip() if reasoning_matches else ""
    return ParsedAnswer(value=value, raw=raw, reasoning=reasoning)


def build_repair_prompt(
    original: PromptPayload, raw: str, error: FormatError, attempt: int
) -> PromptPayload:
    """Re-ask with the offending output quoted and the directive restated.

    Temperature is forced to 0: repairs correct format only, so maximal
    determinism is wanted regardless of the run's sampling settings.
    """
    user_text = (
        f"{original.user_text}\n\n"
        f"Your previous reply (repair attempt {attempt}) could not be accepted "
        f"({error.kind}: {error.detail}). It was:\n"
        f"```\n{raw}\n```\n"
        "Reply again, following the required format exactly."
    )
    params = ModelParams(
        model_name=original.model_params.model_name,
        temperature=0.0,
        top_p=original.model_params.top_p,
        max_output_tokens=original.model_params.max_output_tokens,
    )
    return PromptPayload(
        system_text=original.system_text,
        user_text=user_text,
        model_params=params,
        estimated_tokens=estimate_tokens(original.system_text, user_text),
    )
