"""Run configuration: parameters, validation, and the resume fingerprint."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .profiles import ProfileSchema, ValidationReport, schema_from_mapping, schema_to_mapping, validate_schema
from .survey import SurveySpec, survey_to_csv


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 5
    base_delay: float = 1.0
    max_delay: float = 60.0
    jitter_fraction: float = 0.1


@dataclass
class SimulationConfig:
    run_seed: int
    population_size: int
    profile_schema: ProfileSchema
    provider_id: str = "mock"
    model_name: str = "mock-model"
    temperature: float = 0.7
    top_p: float = 1.0
    max_output_tokens: int = 256
    max_concurrency: int = 8
    rpm_limit: int = 120
    tpm_limit: int = 90000
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    format_repair_attempts: int = 2
    # user-supplied per-token prices, only used for the cost estimate shown
    # in metrics; zero means "no estimate"
    token_price_in: float = 0.0
    token_price_out: float = 0.0


def validate_config(
    config: SimulationConfig, temperature_range: tuple[float, float] = (0.0, 2.0)
) -> ValidationReport:
    report = ValidationReport()
    if config.population_size < 1:
        report.add("population_size", "must be >= 1")
    if config.max_concurrency < 1:
        report.add("max_concurrency", "must be >= 1")
    if config.rpm_limit < 1:
        report.add("rpm_limit", "must be >= 1")
    if config.tpm_limit < 1:
        report.add("tpm_limit", "must be >= 1")
    if config.max_output_tokens < 1:
        report.add("max_output_tokens", "must be >= 1")
    lo, hi = temperature_range
    if not lo <= config.temperature <= hi:
        report.add("temperature", f"out of provider range [{lo}, {hi}]")
    if not 0.0 < config.top_p <= 1.0:
        report.add("top_p", "out of (0,1]")
    if config.format_repair_attempts < 0:
        report.add("format_repair_attempts", "must be >= 0")
    if not config.provider_id:
        report.add("provider_id", "must be set")
    if not config.model_name:
        report.add("model_name", "must be set")
    retry = config.retry
    if retry.max_retries < 0:
        report.add("retry.max_retries", "must be >= 0")
    if retry.base_delay < 0:
        report.add("retry.base_delay", "must be >= 0")
    if retry.base_delay > retry.max_delay:
        report.add("retry.base_delay", "must not exceed retry.max_delay")
    if not 0.0 <= retry.jitter_fraction <= 1.0:
        report.add("retry.jitter_fraction", "out of [0,1]")
    schema_report = validate_schema(config.profile_schema)
    for issue in schema_report.issues:
        report.add(f"profile_schema.{issue.subject}", issue.message)
    return report


def config_to_mapping(config: SimulationConfig) -> dict:
    return {
        "run_seed": config.run_seed,
        "population_size": config.population_size,
        "profile_schema": schema_to_mapping(config.profile_schema),
        "provider_id": config.provider_id,
        "model_name": config.model_name,
        "temperature": config.temperature,
        "top_p": config.top_p,
        "max_output_tokens": config.max_output_tokens,
        "max_concurrency": config.max_concurrency,
        "rpm_limit": config.rpm_limit,
        "tpm_limit": config.tpm_limit,
        "retry": {
            "max_retries": config.retry.max_retries,
            "base_delay": config.retry.base_delay,
            "max_delay": config.retry.max_delay,
            "jitter_fraction": config.retry.jitter_fraction,
        },
        "format_repair_attempts": config.format_repair_attempts,
        "token_price_in": config.token_price_in,
        "token_price_out": config.token_price_out,
    }


def config_from_mapping(mapping: dict) -> SimulationConfig:
    if not isinstance(mapping, dict):
        raise ValueError("config document must be a key-value tree")
    missing = [key for key in ("run_seed", "population_size", "profile_schema") if key not in mapping]
    if missing:
        raise ValueError(f"config missing required fields: {', '.join(missing)}")
    retry_raw = mapping.get("retry", {}) or {}
    retry = RetryPolicy(
        max_retries=int(retry_raw.get("max_retries", 5)),
        base_delay=float(retry_raw.get("base_delay", 1.0)),
        max_delay=float(retry_raw.get("max_delay", 60.0)),
        jitter_fraction=float(retry_raw.get("jitter_fraction", 0.1)),
    )
    return SimulationConfig(
        run_seed=int(mapping["run_seed"]),
        population_size=int(mapping["population_size"]),
        profile_schema=schema_from_mapping(mapping["profile_schema"]),
        provider_id=str(mapping.get("provider_id", "mock")),
        model_name=str(mapping.get("model_name", "mock-model")),
        temperature=float(mapping.get("temperature", 0.7)),
        top_p=float(mapping.get("top_p", 1.0)),
        max_output_tokens=int(mapping.get("max_output_tokens", 256)),
        max_concurrency=int(mapping.get("max_concurrency", 8)),
        rpm_limit=int(mapping.get("rpm_limit", 120)),
        tpm_limit=int(mapping.get("tpm_limit", 90000)),
        retry=retry,
        format_repair_attempts=int(mapping.get("format_repair_attempts", 2)),
        token_price_in=float(mapping.get("token_price_in", 0.0)),
        token_price_out=float(mapping.get("token_price_out", 0.0)),
    )


def config_to_yaml(config: SimulationConfig) -> str:
    return yaml.safe_dump(config_to_mapping(config), sort_keys=False)


def config_from_yaml(text: str) -> SimulationConfig:
    return config_from_mapping(yaml.safe_load(text))


def run_fingerprint(config: SimulationConfig, survey: SurveySpec) -> str:
    """Hash that must match for a manifest to be resumable.

    Covers the full config and the survey content: editing either changes
    the job universe, so resuming against it would corrupt accounting.
    """
    canonical = json.dumps(config_to_mapping(config), sort_keys=True) + survey_to_csv(survey)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
