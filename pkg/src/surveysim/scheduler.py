"""The request handler: concurrent, rate-limited, loss-free job execution.

One coordinator owns the job stream and the manifest; a bounded pool of
worker tasks dispatches prompts and reports outcomes back over a queue.
Persistence ordering is write-ahead: the answer is saved, then the job is
marked completed, then (periodically) a checkpoint is written — so a crash
at any step can cause a re-attempt but never a loss, and resume stays
duplicate-free because answer saves are idempotent on the job key.
"""

from __future__ import annotations

import asyncio
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol

from .clock import Clock
from .config import RetryPolicy, SimulationConfig
from .profiles import mix_seed
from .prompts import DIRECTIVE_VERSION, FormatError, build_prompt, build_repair_prompt, parse_response
from .providers import Provider, ProviderError, RequestContext
from .ratelimit import InfeasibleRequestError, RateBudget, RateBudgetLimits
from .records import (
    STOP_CANCELLED,
    STOP_CHECKPOINT,
    STOP_FATAL,
    STOP_FINISHED,
    AnswerRecord,
    JobId,
    RunManifest,
    UncompletedJob,
    encode_snapshot_line,
)
from .survey import COMPLETED, EXHAUSTED, IN_FLIGHT, PENDING, RequestJob, SurveySpec, expand_jobs

RETRYABLE_RATE_LIMIT = "retryable-rate-limit"
RETRYABLE_TRANSIENT = "retryable-transient"
FATAL_ERROR = "fatal"
FORMAT_FAILURE = "format"


class ConfigMismatchError(Exception):
    """Resume refused: the manifest belongs to a different configuration."""


def classify_error(error: Exception) -> str:
    if isinstance(error, FormatError):
        return FORMAT_FAILURE
    if isinstance(error, ProviderError):
        return {
            "rate_limit": RETRYABLE_RATE_LIMIT,
            "transient": RETRYABLE_TRANSIENT,
            "fatal": FATAL_ERROR,
        }[error.kind]
    return FATAL_ERROR


def compute_backoff(attempt: int, policy: RetryPolicy, rng: random.Random) -> float:
    if attempt < 0:
        raise ValueError("attempt must be >= 0")
    delay = min(policy.max_delay, policy.base_delay * (2**attempt))
    jitter = rng.uniform(0.0, policy.jitter_fraction) if policy.jitter_fraction > 0 else 0.0
    return delay * (1.0 + jitter)


class AnswerSink(Protocol):
    def save(self, record: AnswerRecord) -> bool:
        """Persist; return False when the key already existed (no-op)."""


class CheckpointSink(Protocol):
    def write(self, manifest: RunManifest) -> None: ...


class MetricsSink(Protocol):
    def record(self, event: dict) -> None: ...


class NullMetricsSink:
    def record(self, event: dict) -> None:
        pass


class MemoryAnswerSink:
    def __init__(self):
        self.records: dict[JobId, AnswerRecord] = {}

    def save(self, record: AnswerRecord) -> bool:
        if record.key in self.records:
            return False
        self.records[record.key] = record
        return True


class MemoryCheckpointSink:
    def __init__(self):
        self.snapshots: list[RunManifest] = []

    def write(self, manifest: RunManifest) -> None:
        self.snapshots.append(manifest)

    def latest(self) -> RunManifest | None:
        return self.snapshots[-1] if self.snapshots else None


class JsonlAnswerSink:
    """Append-only answer log for file-based (CLI) runs.

    Existing valid lines are loaded at open, so resumed runs are
    duplicate-free: a key already on disk makes save a no-op, and a torn
    tail line is simply ignored and re-earned by the resumed run.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.records: dict[JobId, AnswerRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                try:
                    record = AnswerRecord.from_mapping(json.loads(line))
                except (ValueError, TypeError, KeyError):
                    continue
                self.records.setdefault(record.key, record)
        self._file = self.path.open("a", encoding="utf-8")

    def save(self, record: AnswerRecord) -> bool:
        if record.key in self.records:
            return False
        self._file.write(json.dumps(record.to_mapping(), sort_keys=True) + "\n")
        self._file.flush()
        self.records[record.key] = record
        return True

    def close(self) -> None:
        self._file.close()


class FileCheckpointSink:
    """Append-only manifest snapshot log; recovery takes the last valid line."""

    def __init__(self, path):
        self.path = Path(path)
        self._file = self.path.open("a", encoding="utf-8")

    def write(self, manifest: RunManifest) -> None:
        self._file.write(encode_snapshot_line(manifest) + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()


@dataclass
class RunSinks:
    answers: AnswerSink
    checkpoints: CheckpointSink
    metrics: MetricsSink = field(default_factory=NullMetricsSink)


class CancelToken:
    def __init__(self):
        self._event = asyncio.Event()

    def set(self) -> None:
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()


@dataclass
class RunnerOptions:
    buffer_size: int = 256
    checkpoint_interval: int = 25


@dataclass
class RunStats:
    provider_calls: int = 0
    retries: int = 0
    repairs: int = 0
    peak_materialized: int = 0
    peak_in_flight: int = 0
    started_at: float = 0.0
    finished_at: float = 0.0


@dataclass
class RunResult:
    manifest: RunManifest
    stats: RunStats


_SENTINEL = object()


class _State:
    """Mutable run state shared by feeder, workers, and coordinator."""

    def __init__(self, base: RunManifest):
        self.completed: set[JobId] = set(base.completed)
        self.uncompleted: dict[JobId, UncompletedJob] = {}
        self.streamed: set[JobId] = set()
        self.cursor: tuple[int, int] | None = base.cursor
        self.materialized = 0
        self.in_flight = 0
        self.fatal = asyncio.Event()


def _advance_cursor(job: RequestJob, population_size: int, question_count: int):
    q = job.question_index + 1
    a = job.agent_index
    if q >= question_count:
        a, q = a + 1, 0
    return (a, q) if a < population_size else None


async def run_jobs(
    jobs: Iterator[RequestJob],
    provider: Provider,
    config: SimulationConfig,
    sinks: RunSinks,
    clock: Clock,
    *,
    run_id: str,
    config_hash: str,
    population_size: int,
    question_count: int,
    cancel: CancelToken | None = None,
    options: RunnerOptions | None = None,
    base_manifest: RunManifest | None = None,
) -> RunResult:
    """Drive the stream to completion (or cancellation / fatal abort).

    Every streamed job ends completed or in the uncompleted list; answers
    hit the sink before completion is recorded; the returned manifest's
    accounting is exhaustive over streamed jobs.
    """
    cancel = cancel or CancelToken()
    options = options or RunnerOptions()
    base = base_manifest or RunManifest(run_id=run_id, config_hash=config_hash)
    state = _State(base)
    stats = RunStats(started_at=clock.now())
    budget = RateBudget(RateBudgetLimits(config.rpm_limit, config.tpm_limit), clock)
    backoff_rng = random.Random(mix_seed(config.run_seed, 0xB0FF))

    job_queue: asyncio.Queue = asyncio.Queue()
    results: asyncio.Queue = asyncio.Queue()
    space = asyncio.Semaphore(options.buffer_size)
    workers = max(1, config.max_concurrency)

    def emit(event_type: str, **extra) -> None:
        sinks.metrics.record({"type": event_type, "run_id": run_id, "at": clock.now(), **extra})

    async def feeder() -> None:
        try:
            for job in jobs:
                await space.acquire()
                if cancel.is_set() or state.fatal.is_set():
                    space.release()
                    break
                state.streamed.add(job.job_id)
                state.materialized += 1
                stats.peak_materialized = max(stats.peak_materialized, state.materialized)
                state.cursor = _advance_cursor(job, population_size, question_count)
                await job_queue.put(job)
        except Exception as exc:
            await results.put(("crash", exc))
            raise
        finally:
            for _ in range(workers):
                job_queue.put_nowait(_SENTINEL)

    async def process(job: RequestJob) -> tuple:
        """Run one job to a terminal outcome; returns a result message."""
        schema = job.question.answer_schema
        payload = None
        repairs = 0
        usage_in = usage_out = 0
        last_error: str | None = None
        from_pending = True
        while True:
            if cancel.is_set() or state.fatal.is_set():
                reason = "cancelled" if cancel.is_set() else "aborted by fatal error"
                if job.attempt > 0:
                    reason += f" after {job.attempt} attempts"
                    if last_error:
                        reason += f" (last error {last_error})"
                return ("interrupted", job, job.attempt, reason)
            if payload is None:
                payload = build_prompt(job.profile, job.question, config)
                job.prompt = payload
            try:
                permit = await budget.acquire(payload.estimated_tokens)
            except InfeasibleRequestError as exc:
                # retrying cannot help an over-budget request: fail the job now
                if from_pending:
                    job.transition(IN_FLIGHT)
                    emit("dispatched")
                job.transition(EXHAUSTED)
                return ("exhausted", job, job.attempt, f"infeasible: {exc}", False)
            if from_pending:
                job.transition(IN_FLIGHT)
                emit("dispatched")
                from_pending = False
                # repair calls stay within the current attempt round: format
                # failures consume repair attempts, not retry attempts
                job.attempt += 1
            stats.provider_calls += 1
            state.in_flight += 1
            stats.peak_in_flight = max(stats.peak_in_flight, state.in_flight)
            try:
                result = await provider.complete(
                    payload,
                    RequestContext(job.agent_id, job.question_id, job.attempt - 1),
                )
            except ProviderError as err:
                state.in_flight -= 1
                kind = classify_error(err)
                last_error = f"{kind}: {err.detail}" if err.detail else kind
                if kind == FATAL_ERROR:
                    job.transition(EXHAUSTED)
                    return ("exhausted", job, job.attempt, last_error, True)
                if job.attempt > config.retry.max_retries:
                    job.transition(EXHAUSTED)
                    return ("exhausted", job, job.attempt, last_error, False)
                delay = compute_backoff(job.attempt - 1, config.retry, backoff_rng)
                if kind == RETRYABLE_RATE_LIMIT and err.retry_after is not None:
                    delay = max(delay, err.retry_after)
                job.transition(PENDING)
                from_pending = True
                stats.retries += 1
                emit("retried")
                await clock.sleep(delay)
                continue
            state.in_flight -= 1
            budget.reconcile(permit, result.usage.total)
            usage_in += result.usage.input_tokens
            usage_out += result.usage.output_tokens
            emit("usage", input_tokens=result.usage.input_tokens, output_tokens=result.usage.output_tokens)
            try:
                parsed = parse_response(result.text, schema)
            except FormatError as fmt_err:
                if repairs >= config.format_repair_attempts:
                    last_error = f"format: {fmt_err.kind}: {fmt_err.detail}"
                    job.transition(EXHAUSTED)
                    return ("exhausted", job, job.attempt, last_error, False)
                repairs += 1
                stats.repairs += 1
                emit("repaired")
                payload = build_repair_prompt(payload, result.text, fmt_err, repairs)
                continue
            record = AnswerRecord(
                run_id=run_id,
                agent_id=job.agent_id,
                question_id=job.question_id,
                agent_index=job.agent_index,
                question_index=job.question_index,
                value=parsed.value,
                reasoning=parsed.reasoning,
                raw=result.text,
                input_tokens=usage_in,
                output_tokens=usage_out,
                attempts=job.attempt,
                created_at=clock.now(),
            )
            sinks.answers.save(record)
            job.transition(COMPLETED)
            return ("completed", job, record)

    async def worker() -> None:
        try:
            while True:
                item = await job_queue.get()
                if item is _SENTINEL:
                    await results.put(("exit",))
                    return
                job: RequestJob = item
                space.release()
                if cancel.is_set() or state.fatal.is_set():
                    reason = "cancelled" if cancel.is_set() else "aborted by fatal error"
                    message = ("interrupted", job, 0, reason)
                else:
                    message = await process(job)
                state.materialized -= 1
                await results.put(message)
        except Exception as exc:  # sink failure or provider contract breach: abandon run
            await results.put(("crash", exc))
            raise

    def build_manifest(stop_reason: str) -> RunManifest:
        uncompleted = [
            state.uncompleted.get(job_id, UncompletedJob(job_id[0], job_id[1], 0, "in progress"))
            for job_id in sorted(state.streamed - state.completed)
        ]
        return RunManifest(
            run_id=run_id,
            config_hash=config_hash,
            completed=set(state.completed),
            uncompleted=uncompleted,
            cursor=state.cursor,
            stop_reason=stop_reason,
            directive_version=DIRECTIVE_VERSION,
        )

    feed_task = asyncio.create_task(feeder())
    worker_tasks = [asyncio.create_task(worker()) for _ in range(workers)]
    all_tasks = [feed_task, *worker_tasks]

    completions_since_checkpoint = 0
    exits = 0
    try:
        while exits < workers:
            message = await results.get()
            kind = message[0]
            if kind == "exit":
                exits += 1
            elif kind == "completed":
                _, job, record = message
                state.completed.add(job.job_id)
                state.uncompleted.pop(job.job_id, None)
                emit("completed")
                completions_since_checkpoint += 1
                if completions_since_checkpoint >= options.checkpoint_interval:
                    sinks.checkpoints.write(build_manifest(STOP_CHECKPOINT))
                    completions_since_checkpoint = 0
            elif kind == "exhausted":
                _, job, attempts, last_error, is_fatal = message
                state.uncompleted[job.job_id] = UncompletedJob(
                    job.agent_id, job.question_id, attempts, last_error
                )
                emit("exhausted", last_error=last_error)
                if is_fatal:
                    state.fatal.set()
            elif kind == "interrupted":
                _, job, attempts, reason = message
                state.uncompleted[job.job_id] = UncompletedJob(
                    job.agent_id, job.question_id, attempts, reason
                )
            elif kind == "crash":
                raise message[1]
    except BaseException:
        for task in all_tasks:
            task.cancel()
        await asyncio.gather(*all_tasks, return_exceptions=True)
        raise
    await feed_task

    if state.fatal.is_set():
        stop_reason = STOP_FATAL
    elif cancel.is_set():
        stop_reason = STOP_CANCELLED
    else:
        stop_reason = STOP_FINISHED
    manifest = build_manifest(stop_reason)
    sinks.checkpoints.write(manifest)
    stats.finished_at = clock.now()
    return RunResult(manifest=manifest, stats=stats)


def resume_jobs(
    manifest: RunManifest,
    population: list,
    survey: SurveySpec,
    config_hash: str,
) -> Iterator[RequestJob]:
    """Stream exactly the unfinished jobs of a previous run.

    The stream is the full cross product minus the manifest's completed
    set, in the original agent-major order, so no completed job is ever
    re-dispatched.
    """
    if manifest.config_hash != config_hash:
        raise ConfigMismatchError(
            "manifest was recorded under a different config/survey; resume refused"
        )
    return expand_jobs(population, survey, skip=set(manifest.completed))
