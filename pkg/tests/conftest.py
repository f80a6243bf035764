import asyncio

import pytest

from surveysim.clock import SimulatedClock
from surveysim.config import RetryPolicy, SimulationConfig
from surveysim.profiles import schema_from_mapping
from surveysim.survey import parse_survey_document


def run_async(coro):
    return asyncio.run(coro)


BASIC_SCHEMA_MAPPING = {
    "attributes": [
        {"name": "age", "kind": "integer-range", "low": 18, "high": 90, "units": "years"},
        {
            "name": "gender",
            "kind": "categorical",
            "options": [
                {"value": "male", "weight": 0.49},
                {"value": "female", "weight": 0.49},
                {"value": "nonbinary", "weight": 0.02},
            ],
        },
        {"name": "personality", "kind": "big5"},
    ],
    "narrative_mode": "mechanistic",
}

SURVEY_CSV = (
    "question_id,text,answer_kind,options,answer_instruction\n"
    "q1,How satisfied are you with your life?,likert,1|7,Answer honestly.\n"
    "q2,Pick your preferred color,single-choice,red|green|blue,\n"
    "q3,How much would you donate?,numeric-range,0|100,Assume you hold 100 units.\n"
    "q4,Describe your ideal day,free-text,,Keep it short.\n"
)


@pytest.fixture
def basic_schema():
    return schema_from_mapping(BASIC_SCHEMA_MAPPING)


@pytest.fixture
def survey():
    return parse_survey_document(SURVEY_CSV)


@pytest.fixture
def clock():
    return SimulatedClock()


def make_config(schema, **overrides) -> SimulationConfig:
    defaults = dict(
        run_seed=42,
        population_size=5,
        profile_schema=schema,
        provider_id="mock",
        model_name="mock-model",
        temperature=0.7,
        top_p=1.0,
        max_output_tokens=256,
        max_concurrency=4,
        rpm_limit=600,
        tpm_limit=500000,
        retry=RetryPolicy(max_retries=4, base_delay=1.0, max_delay=30.0, jitter_fraction=0.0),
        format_repair_attempts=2,
    )
    defaults.update(overrides)
    return SimulationConfig(**defaults)


@pytest.fixture
def config(basic_schema):
    return make_config(basic_schema)
