"""Run orchestration shared by the CLI and the HTTP service.

Both surfaces prepare and execute runs through these helpers, so a given
(config, survey, seed, provider script) produces identical records and
identical exports no matter which surface launched it.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass

from .clock import Clock
from .config import SimulationConfig, run_fingerprint, validate_config
from .profiles import AgentProfile, generate_population
from .providers import Provider
from .records import RunManifest
from .scheduler import CancelToken, ConfigMismatchError, RunnerOptions, RunResult, RunSinks, resume_jobs, run_jobs
from .survey import SurveySpec, expand_jobs


class InvalidRunError(Exception):
    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


@dataclass
class PreparedRun:
    run_id: str
    config: SimulationConfig
    survey: SurveySpec
    population: list[AgentProfile]
    fingerprint: str

    @property
    def total_jobs(self) -> int:
        return len(self.population) * len(self.survey.questions)


def prepare_run(
    config: SimulationConfig,
    survey: SurveySpec,
    population: list[AgentProfile] | None = None,
    run_id: str | None = None,
) -> PreparedRun:
    """Validate, generate (or adopt) the population, fingerprint the run."""
    report = validate_config(config)
    if not report.ok:
        raise InvalidRunError(report)
    if not survey.questions:
        raise InvalidRunError("survey has no questions")
    if population is None:
        population = generate_population(
            config.profile_schema, config.population_size, config.run_seed
        )
    return PreparedRun(
        run_id=run_id or uuid.uuid4().hex,
        config=config,
        survey=survey,
        population=population,
        fingerprint=run_fingerprint(config, survey),
    )


async def execute_run(
    prepared: PreparedRun,
    provider: Provider,
    sinks: RunSinks,
    clock: Clock,
    cancel: CancelToken | None = None,
    options: RunnerOptions | None = None,
    base_manifest: RunManifest | None = None,
) -> RunResult:
    if base_manifest is not None:
        jobs = resume_jobs(base_manifest, prepared.population, prepared.survey, prepared.fingerprint)
    else:
        jobs = expand_jobs(prepared.population, prepared.survey)
    return await run_jobs(
        jobs,
        provider,
        prepared.config,
        sinks,
        clock,
        run_id=prepared.run_id,
        config_hash=prepared.fingerprint,
        population_size=len(prepared.population),
        question_count=len(prepared.survey.questions),
        cancel=cancel,
        options=options,
        base_manifest=base_manifest,
    )


__all__ = [
    "ConfigMismatchError",
    "InvalidRunError",
    "PreparedRun",
    "execute_run",
    "prepare_run",
]
