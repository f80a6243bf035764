"""Headless operation for scripted research pipelines.

Everything runs against local files: no authentication, no credential
store. A run directory collects results.csv, manifest.jsonl,
metrics.jsonl, and directive_version.txt; --mock swaps in the
deterministic provider (and virtual time, so mock runs are instant), and
--resume continues a previous manifest without re-dispatching completed
work.

Exit codes: 0 success, 1 validation error, 2 run failed with partial
results (the manifest path is printed), 3 fatal.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import yaml

from .clock import RealClock, SimulatedClock
from .config import config_from_yaml, validate_config
from .exports import results_to_csv
from .metrics import MetricsHub
from .profiles import (
    generate_population,
    population_to_csv,
    schema_from_yaml,
    validate_schema,
)
from .prompts import DIRECTIVE_VERSION
from .providers import MockProvider
from .providers.mock import MockScript, mock_script_from_mapping
from .records import STOP_FINISHED, latest_valid_snapshot
from .runner import ConfigMismatchError, InvalidRunError, execute_run, prepare_run
from .scheduler import FileCheckpointSink, JsonlAnswerSink, RunSinks
from .service import default_provider_registry
from .survey import FORMAT_DELIMITED, FORMAT_STRUCTURED, SurveyParseError, parse_survey_document

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3

RESULTS_FILE = "results.csv"
MANIFEST_FILE = "manifest.jsonl"
METRICS_FILE = "metrics.jsonl"
DIRECTIVE_FILE = "directive_version.txt"
ANSWERS_LOG = "answers.jsonl"


def _fail(message: str, code: int) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _survey_format(path: Path) -> str:
    return FORMAT_STRUCTURED if path.suffix in (".yaml", ".yml") else FORMAT_DELIMITED


def _load_inputs(config_path: Path, survey_path: Path):
    try:
        config = config_from_yaml(config_path.read_text(encoding="utf-8"))
    except (ValueError, KeyError, yaml.YAMLError) as exc:
        _fail(f"config error: {exc}", EXIT_VALIDATION)
    try:
        survey = parse_survey_document(
            survey_path.read_bytes(), _survey_format(survey_path)
        )
    except SurveyParseError as exc:
        _fail("survey errors:\n  " + "\n  ".join(exc.problems), EXIT_VALIDATION)
    return config, survey


@click.group()
def main() -> None:
    """Survey-simulation runner."""


@main.command("run")
@click.option("-c", "--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("-s", "--survey", "survey_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("-o", "--output", "output_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the config's run_seed.")
@click.option("--resume", "resume_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Continue from a previous manifest.jsonl.")
@click.option("--mock", is_flag=True, help="Use the deterministic mock provider under virtual time.")
@click.option("--mock-script", "mock_script_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Mock behavior script (fault injection, scripted outcomes).")
def cmd_run(config_path, survey_path, output_dir, seed, resume_path, mock, mock_script_path) -> None:
    """Execute a full run and write its artifacts to the output directory."""
    config, survey = _load_inputs(config_path, survey_path)
    if seed is not None:
        config.run_seed = seed
    report = validate_config(config)
    if not report.ok:
        _fail(f"config invalid: {report}", EXIT_VALIDATION)

    output_dir.mkdir(parents=True, exist_ok=True)

    use_mock = mock or config.provider_id == "mock"
    clock = SimulatedClock() if use_mock else RealClock()
    if use_mock:
        script = MockScript()
        if mock_script_path is not None:
            script = mock_script_from_mapping(
                yaml.safe_load(mock_script_path.read_text(encoding="utf-8")) or {}
            )
        provider = MockProvider(script, seed=config.run_seed, clock=clock)
    else:
        provider = default_provider_registry().create(
            config.provider_id, config=config, clock=clock
        )

    try:
        prepared = prepare_run(config, survey)
    except InvalidRunError as exc:
        _fail(f"invalid run: {exc}", EXIT_VALIDATION)

    base_manifest = None
    if resume_path is not None:
        base_manifest = latest_valid_snapshot(
            resume_path.read_text(encoding="utf-8").splitlines()
        )
        if base_manifest is None:
            _fail("no valid manifest snapshot found in resume file", EXIT_VALIDATION)
        if base_manifest.config_hash != prepared.fingerprint:
            _fail("manifest config hash does not match current config/survey; resume refused",
                  EXIT_VALIDATION)
        prepared.run_id = base_manifest.run_id

    answers = JsonlAnswerSink(output_dir / ANSWERS_LOG)
    checkpoints = FileCheckpointSink(output_dir / MANIFEST_FILE)
    hub = MetricsHub(clock)
    hub.register_run(prepared.run_id, prepared.total_jobs,
                     config.token_price_in, config.token_price_out,
                     already_completed=len(base_manifest.completed) if base_manifest else 0)
    sinks = RunSinks(answers=answers, checkpoints=checkpoints, metrics=hub)

    async def drive():
        try:
            result = await execute_run(
                prepared, provider, sinks, clock, base_manifest=base_manifest
            )
        finally:
            # metrics summary: one line per snapshot taken at run end
            metrics_lines = [
                json.dumps(hub.snapshot(prepared.run_id).to_mapping(), sort_keys=True)
            ]
            hub.finish_run(prepared.run_id)
        return result, metrics_lines

    try:
        result, metrics_lines = asyncio.run(drive())
    except ConfigMismatchError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    except Exception as exc:  # provider/sink breakage outside the retry contract
        _fail(f"run aborted: {exc}", EXIT_FATAL)
    finally:
        answers.close()
        checkpoints.close()

    ordered = sorted(
        answers.records.values(), key=lambda r: (r.agent_index, r.question_index)
    )
    (output_dir / RESULTS_FILE).write_text(
        results_to_csv(ordered, prepared.fingerprint, DIRECTIVE_VERSION), encoding="utf-8"
    )
    (output_dir / METRICS_FILE).write_text(
        "\n".join(metrics_lines) + "\n" if metrics_lines else "", encoding="utf-8"
    )
    (output_dir / DIRECTIVE_FILE).write_text(DIRECTIVE_VERSION + "\n", encoding="utf-8")

    manifest = result.manifest
    click.echo(
        f"completed {len(manifest.completed)}/{prepared.total_jobs} jobs "
        f"({manifest.stop_reason}); results in {output_dir / RESULTS_FILE}"
    )
    if manifest.stop_reason != STOP_FINISHED or manifest.uncompleted:
        click.echo(f"manifest with uncompleted work: {output_dir / MANIFEST_FILE}")
        sys.exit(EXIT_PARTIAL)
    sys.exit(EXIT_OK)


@main.command("generate-profiles")
@click.option("--schema", "schema_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("-n", "count", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("-o", "--output", "output_path", type=click.Path(path_type=Path), required=True)
def cmd_generate_profiles(schema_path, count, seed, output_path) -> None:
    """Write a population table for a profile schema."""
    schema = schema_from_yaml(schema_path.read_text(encoding="utf-8"))
    report = validate_schema(schema)
    if not report.ok:
        _fail(f"schema invalid: {report}", EXIT_VALIDATION)
    if count < 0:
        _fail("population size must be >= 0", EXIT_VALIDATION)
    population = generate_population(schema, count, seed)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(population_to_csv(population, schema), encoding="utf-8")
    click.echo(f"wrote {len(population)} profiles to {output_path}")
    sys.exit(EXIT_OK)


@main.command("validate")
@click.option("-c", "--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("-s", "--survey", "survey_path", type=click.Path(exists=True, path_type=Path), required=True)
def cmd_validate(config_path, survey_path) -> None:
    """Check a config and survey pair; print the consolidated report."""
    config, survey = _load_inputs(config_path, survey_path)
    report = validate_config(config)
    if not report.ok:
        _fail(f"config invalid: {report}", EXIT_VALIDATION)
    click.echo(f"ok: config valid, survey has {len(survey.questions)} questions")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
