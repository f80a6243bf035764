"""Survey-simulation orchestration platform.

Generates populations of synthetic survey respondents, renders each
(agent, question) pair into a structured prompt, and drives the resulting
job stream through pluggable model providers under concurrency and rate
budgets — with retries, checkpointing, and loss-free recovery. Runs are
exposed through a persistence layer, an HTTP service, a CLI, and a live
metrics stream for the dashboard.
"""

__version__ = "0.1.0"

from .clock import Clock, RealClock, SimulatedClock
from .config import RetryPolicy, SimulationConfig, config_from_yaml, validate_config
from .profiles import AgentProfile, ProfileSchema, generate_population, validate_schema
from .prompts import DIRECTIVE_VERSION, build_prompt, parse_response
from .records import AnswerRecord, RunManifest
from .scheduler import CancelToken, RunnerOptions, RunSinks, run_jobs
from .survey import SurveySpec, expand_jobs, parse_survey_document

__all__ = [
    "AgentProfile",
    "AnswerRecord",
    "CancelToken",
    "Clock",
    "DIRECTIVE_VERSION",
    "ProfileSchema",
    "RealClock",
    "RetryPolicy",
    "RunManifest",
    "RunSinks",
    "RunnerOptions",
    "SimulatedClock",
    "SimulationConfig",
    "SurveySpec",
    "build_prompt",
    "config_from_yaml",
    "expand_jobs",
    "generate_population",
    "parse_response",
    "parse_survey_document",
    "run_jobs",
    "validate_config",
    "validate_schema",
]
