"""Authenticated HTTP API: runs, uploads, metrics streaming, downloads.

Runs are asynchronous: POST /runs returns a handle immediately and the
scheduler progresses as a background task; clients poll GET /runs/{id} or
subscribe to the server-push metrics stream. Every run belongs to exactly
one user and every endpoint checks ownership before touching data.
"""

from __future__ import annotations

import asyncio
import email.parser
import email.policy
import json
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import PlainTextResponse, StreamingResponse

from .clock import Clock, RealClock
from .config import SimulationConfig, config_from_mapping, config_to_mapping
from .exports import results_to_csv, results_to_jsonl
from .metrics import MetricsHub, UnknownRunError as UnknownMetricsRun
from .profiles import AgentProfile, population_from_csv, schema_from_yaml, validate_schema
from .prompts import DIRECTIVE_VERSION
from .providers import MockProvider, OpenAICompatProvider, ProviderRegistry
from .records import STOP_CANCELLED, STOP_FATAL
from .runner import InvalidRunError, PreparedRun, execute_run, prepare_run
from .scheduler import CancelToken, RunnerOptions, RunSinks
from .store import CredentialStore, DuplicateLoginError, SimulationStore, StoreAnswerSink, StoreCheckpointSink, UnknownRunError
from .survey import FORMAT_DELIMITED, SurveyParseError, parse_survey_document

DRAFT = "draft"
RUNNING = "running"
CANCELLING = "cancelling"
COMPLETED = "completed"
FAILED = "failed"
CANCELLED = "cancelled"

ALLOWED_TRANSITIONS = {
    DRAFT: {RUNNING},
    RUNNING: {COMPLETED, FAILED, CANCELLING},
    CANCELLING: {CANCELLED},
    COMPLETED: set(),
    FAILED: {RUNNING},      # resume
    CANCELLED: {RUNNING},   # resume
}


class StateConflictError(Exception):
    def __init__(self, run_id: str, state: str, wanted: str):
        self.state = state
        super().__init__(f"run {run_id} is {state}, cannot {wanted}")


@dataclass
class RunHandle:
    run_id: str
    owner: str
    state: str
    created_at: float


@dataclass
class _RunEntry:
    handle: RunHandle
    prepared: PreparedRun
    cancel: CancelToken = field(default_factory=CancelToken)
    task: asyncio.Task | None = None


def default_provider_registry() -> ProviderRegistry:
    registry = ProviderRegistry()
    registry.register(
        "mock", lambda config, clock: MockProvider(seed=config.run_seed, clock=clock)
    )
    registry.register("openai", lambda config, clock: OpenAICompatProvider())
    return registry


@dataclass
class ServiceSettings:
    data_dir: Path
    providers: ProviderRegistry = field(default_factory=default_provider_registry)
    clock: Clock = field(default_factory=RealClock)
    token_ttl: float = 3600.0
    runner_options: RunnerOptions = field(default_factory=RunnerOptions)
    # origins allowed to call the API from a browser (the dashboard is
    # served separately); empty disables CORS headers entirely
    cors_origins: tuple[str, ...] = ("*",)


class RunRegistry:
    """Owner of every run's state machine and background task."""

    def __init__(self, settings: ServiceSettings, sim_store: SimulationStore, hub: MetricsHub):
        self.settings = settings
        self.sim_store = sim_store
        self.hub = hub
        self._entries: dict[tuple[str, str], _RunEntry] = {}
        self._by_key: dict[tuple[str, str], str] = {}
        # audited by the model-based state machine test
        self.transition_log: list[tuple[str, str, str]] = []

    def _transition(self, entry: _RunEntry, new_state: str) -> None:
        old = entry.handle.state
        if new_state not in ALLOWED_TRANSITIONS[old]:
            raise StateConflictError(entry.handle.run_id, old, f"enter {new_state}")
        entry.handle.state = new_state
        self.transition_log.append((entry.handle.run_id, old, new_state))
        self.sim_store.for_user(entry.handle.owner).set_run_state(entry.handle.run_id, new_state)

    def get(self, user_id: str, run_id: str) -> _RunEntry:
        entry = self._entries.get((user_id, run_id))
        if entry is None:
            raise UnknownRunError(run_id)
        return entry

    def start_run(
        self,
        user_id: str,
        config: SimulationConfig,
        survey_ref: str,
        population_ref: str | None = None,
        idempotency_key: str | None = None,
    ) -> RunHandle:
        if idempotency_key is not None:
            existing = self._by_key.get((user_id, idempotency_key))
            if existing is not None:
                return self.get(user_id, existing).handle

        store = self.sim_store.for_user(user_id)
        survey_row = store.get_upload(survey_ref)
        if survey_row is None or survey_row[0] != "survey":
            raise HTTPException(status_code=404, detail="survey upload not found")
        survey = parse_survey_document(survey_row[3], survey_row[1])

        population: list[AgentProfile] | None = None
        if population_ref is not None:
            pop_row = store.get_upload(population_ref)
            if pop_row is None or pop_row[0] != "population":
                raise HTTPException(status_code=404, detail="population upload not found")
            population = population_from_csv(
                pop_row[3].decode("utf-8"), config.profile_schema
            )

        prepared = prepare_run(config, survey, population=population)
        handle = RunHandle(
            run_id=prepared.run_id,
            owner=user_id,
            state=DRAFT,
            created_at=self.settings.clock.now(),
        )
        entry = _RunEntry(handle=handle, prepared=prepared)
        self._entries[(user_id, prepared.run_id)] = entry
        if idempotency_key is not None:
            self._by_key[(user_id, idempotency_key)] = prepared.run_id

        store.create_run(
            run_id=prepared.run_id,
            state=DRAFT,
            config_json=json.dumps(config_to_mapping(config), sort_keys=True),
            config_hash=prepared.fingerprint,
            directive_version=DIRECTIVE_VERSION,
            survey_upload_id=survey_ref,
        )
        store.save_population(prepared.run_id, prepared.population)
        self._launch(entry)
        return handle

    def _launch(self, entry: _RunEntry, base_manifest=None) -> None:
        self._transition(entry, RUNNING)
        self.hub.register_run(
            entry.prepared.run_id,
            entry.prepared.total_jobs,
            entry.prepared.config.token_price_in,
            entry.prepared.config.token_price_out,
            already_completed=len(base_manifest.completed) if base_manifest else 0,
        )
        entry.task = asyncio.get_event_loop().create_task(self._execute(entry, base_manifest))

    async def _execute(self, entry: _RunEntry, base_manifest=None) -> None:
        prepared = entry.prepared
        store = self.sim_store.for_user(entry.handle.owner)
        provider = self.settings.providers.create(
            prepared.config.provider_id, config=prepared.config, clock=self.settings.clock
        )
        sinks = RunSinks(
            answers=StoreAnswerSink(store),
            checkpoints=StoreCheckpointSink(store),
            metrics=self.hub,
        )
        try:
            result = await execute_run(
                prepared,
                provider,
                sinks,
                self.settings.clock,
                cancel=entry.cancel,
                options=self.settings.runner_options,
                base_manifest=base_manifest,
            )
        except Exception:
            if entry.handle.state == RUNNING:
                self._transition(entry, FAILED)
            elif entry.handle.state == CANCELLING:
                self._transition(entry, CANCELLED)
            self.hub.finish_run(prepared.run_id)
            raise
        if result.manifest.stop_reason == STOP_CANCELLED or entry.handle.state == CANCELLING:
            if entry.handle.state == RUNNING:
                self._transition(entry, CANCELLING)
            self._transition(entry, CANCELLED)
        elif result.manifest.stop_reason == STOP_FATAL:
            self._transition(entry, FAILED)
        else:
            self._transition(entry, COMPLETED)
        self.hub.finish_run(prepared.run_id)

    def cancel_run(self, user_id: str, run_id: str) -> RunHandle:
        entry = self.get(user_id, run_id)
        if entry.handle.state != RUNNING:
            raise StateConflictError(run_id, entry.handle.state, "cancel")
        self._transition(entry, CANCELLING)
        entry.cancel.set()
        return entry.handle

    def resume_run(self, user_id: str, run_id: str) -> RunHandle:
        entry = self.get(user_id, run_id)
        if entry.handle.state not in (FAILED, CANCELLED):
            raise StateConflictError(run_id, entry.handle.state, "resume")
        store = self.sim_store.for_user(user_id)
        manifest = store.latest_manifest(run_id)
        if manifest is None:
            # a run interrupted before its first checkpoint: resume over the
            # full stream; idempotent answer saves keep it duplicate-free
            from .records import RunManifest

            manifest = RunManifest(run_id=run_id, config_hash=entry.prepared.fingerprint)
        entry.cancel = CancelToken()
        self._launch(entry, base_manifest=manifest)
        return entry.handle

    def restore_from_store(self) -> int:
        """Rehydrate run handles after a service restart.

        Runs that were live when the process died become failed (their
        persisted answers and manifests are intact, so they are resumable);
        terminal runs come back as they were. Returns the number restored.
        """
        restored = 0
        for user_id in self.sim_store.known_users():
            store = self.sim_store.for_user(user_id)
            for row in store.list_runs():
                run_id = row["run_id"]
                if (user_id, run_id) in self._entries:
                    continue
                full = store.get_run(run_id)
                survey_row = store.get_upload(full["survey_upload_id"])
                if survey_row is None:
                    continue
                config = config_from_mapping(json.loads(full["config_json"]))
                prepared = PreparedRun(
                    run_id=run_id,
                    config=config,
                    survey=parse_survey_document(survey_row[3], survey_row[1]),
                    population=store.load_population(run_id),
                    fingerprint=full["config_hash"],
                )
                state = row["state"]
                if state not in (COMPLETED, FAILED, CANCELLED):
                    state = FAILED  # interrupted by the restart
                    store.set_run_state(run_id, state)
                handle = RunHandle(
                    run_id=run_id, owner=user_id, state=state, created_at=full["created_at"]
                )
                self._entries[(user_id, run_id)] = _RunEntry(handle=handle, prepared=prepared)
                self.hub.register_run(
                    run_id,
                    prepared.total_jobs,
                    config.token_price_in,
                    config.token_price_out,
                    already_completed=store.count_answers(run_id),
                )
                self.hub.finish_run(run_id)
                restored += 1
        return restored


def parse_multipart(body: bytes, content_type: str) -> dict[str, tuple[str | None, bytes]]:
    """Multipart form fields as name -> (filename, content)."""
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
    message = email.parser.BytesParser(policy=email.policy.HTTP).parsebytes(header + body)
    fields: dict[str, tuple[str | None, bytes]] = {}
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name is None:
            continue
        fields[str(name)] = (part.get_filename(), part.get_payload(decode=True) or b"")
    return fields


def create_app(settings: ServiceSettings) -> FastAPI:
    settings.data_dir.mkdir(parents=True, exist_ok=True)
    credentials = CredentialStore(
        settings.data_dir / "credentials.db", clock=settings.clock, token_ttl=settings.token_ttl
    )
    sim_store = SimulationStore(settings.data_dir / "simulation")
    hub = MetricsHub(settings.clock)
    registry = RunRegistry(settings, sim_store, hub)
    registry.restore_from_store()

    app = FastAPI(title="surveysim service")
    if settings.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(settings.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )
    app.state.credentials = credentials
    app.state.sim_store = sim_store
    app.state.hub = hub
    app.state.registry = registry
    app.state.settings = settings

    def current_user(authorization: str = Header(default="")) -> str:
        if not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        user_id = credentials.resolve_token(authorization.removeprefix("Bearer "))
        if user_id is None:
            raise HTTPException(status_code=401, detail="invalid or expired token")
        return user_id

    @app.exception_handler(UnknownRunError)
    async def _unknown_run(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=404, content={"detail": "run not found"})

    @app.exception_handler(StateConflictError)
    async def _state_conflict(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.post("/auth/register", status_code=201)
    async def register(body: dict):
        login = str(body.get("login", ""))
        secret = str(body.get("secret", ""))
        if not login or not secret:
            raise HTTPException(status_code=400, detail="login and secret required")
        try:
            user_id = credentials.create_user(login, secret)
        except DuplicateLoginError:
            raise HTTPException(status_code=409, detail="login already taken") from None
        return {"user_id": user_id}

    @app.post("/auth/login")
    async def login(body: dict):
        token = credentials.authenticate(str(body.get("login", "")), str(body.get("secret", "")))
        if token is None:
            raise HTTPException(status_code=401, detail="denied")
        return {"token": token}

    @app.post("/uploads", status_code=201)
    async def upload(request: Request, user_id: str = Depends(current_user)):
        content_type = request.headers.get("content-type", "")
        if "multipart/form-data" not in content_type:
            raise HTTPException(status_code=400, detail="multipart/form-data required")
        fields = parse_multipart(await request.body(), content_type)
        if "file" not in fields:
            raise HTTPException(status_code=400, detail="missing file field")
        kind = fields.get("kind", (None, b"survey"))[1].decode("utf-8") or "survey"
        format = fields.get("format", (None, FORMAT_DELIMITED.encode()))[1].decode("utf-8")
        filename, content = fields["file"]
        if kind == "survey":
            try:
                survey = parse_survey_document(content, format)
            except SurveyParseError as exc:
                raise HTTPException(status_code=400, detail={"problems": exc.problems}) from None
            question_count = len(survey.questions)
        elif kind == "schema":
            schema = schema_from_yaml(content.decode("utf-8"))
            report = validate_schema(schema)
            if not report.ok:
                raise HTTPException(
                    status_code=400, detail={"problems": [str(i) for i in report.issues]}
                )
            question_count = 0
        elif kind == "population":
            question_count = 0
        else:
            raise HTTPException(status_code=400, detail=f"unknown upload kind {kind!r}")
        store = sim_store.for_user(user_id)
        upload_id = store.save_upload(kind, format, filename or "upload", content)
        return {"upload_id": upload_id, "kind": kind, "questions": question_count}

    @app.post("/runs", status_code=201)
    async def start_run(body: dict, user_id: str = Depends(current_user)):
        try:
            config = config_from_mapping(body.get("config", {}))
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"bad config: {exc}") from None
        survey_ref = body.get("survey_ref")
        if not survey_ref:
            raise HTTPException(status_code=400, detail="survey_ref required")
        try:
            handle = registry.start_run(
                user_id,
                config,
                survey_ref,
                population_ref=body.get("population_ref"),
                idempotency_key=body.get("idempotency_key"),
            )
        except InvalidRunError as exc:
            raise HTTPException(
                status_code=400,
                detail={"problems": [str(i) for i in exc.report.issues]}
                if hasattr(exc.report, "issues")
                else str(exc),
            ) from None
        except SurveyParseError as exc:
            raise HTTPException(status_code=400, detail={"problems": exc.problems}) from None
        return _handle_json(handle)

    @app.get("/runs/{run_id}")
    async def get_run(run_id: str, user_id: str = Depends(current_user)):
        entry = registry.get(user_id, run_id)
        store = sim_store.for_user(user_id)
        manifest = store.latest_manifest(run_id)
        payload = _handle_json(entry.handle)
        payload["total_jobs"] = entry.prepared.total_jobs
        payload["answers_persisted"] = store.count_answers(run_id)
        if manifest is not None:
            payload["manifest"] = manifest.to_snapshot()
        return payload

    @app.post("/runs/{run_id}/cancel")
    async def cancel_run(run_id: str, user_id: str = Depends(current_user)):
        handle = registry.cancel_run(user_id, run_id)
        return _handle_json(handle)

    @app.post("/runs/{run_id}/resume")
    async def resume_run(run_id: str, user_id: str = Depends(current_user)):
        handle = registry.resume_run(user_id, run_id)
        return _handle_json(handle)

    @app.get("/runs/{run_id}/metrics")
    async def stream_metrics(
        run_id: str, token: str = "", authorization: str = Header(default="")
    ):
        # browsers' EventSource cannot set headers, so the stream also
        # accepts the bearer token as a query parameter
        user_id = None
        if token:
            user_id = credentials.resolve_token(token)
        if user_id is None:
            user_id = current_user(authorization)
        registry.get(user_id, run_id)  # ownership check

        async def event_stream():
            try:
                subscription = hub.subscribe(run_id)
            except UnknownMetricsRun:
                return
            async for snapshot in subscription:
                yield f"data: {json.dumps(snapshot.to_mapping(), sort_keys=True)}\n\n"

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    @app.get("/runs/{run_id}/results")
    async def download_results(
        run_id: str,
        format: str = "csv",
        offset: int = 0,
        limit: int | None = None,
        user_id: str = Depends(current_user),
    ):
        entry = registry.get(user_id, run_id)
        store = sim_store.for_user(user_id)
        row = store.get_run(run_id)
        records = list(store.stream_results(run_id))
        if offset or limit is not None:
            end = None if limit is None else offset + limit
            records = records[offset:end]
        if format == "csv":
            text = results_to_csv(records, row["config_hash"], row["directive_version"])
            return PlainTextResponse(text, media_type="text/csv")
        if format == "jsonl":
            text = results_to_jsonl(records, row["config_hash"], row["directive_version"])
            return PlainTextResponse(text, media_type="application/x-ndjson")
        raise HTTPException(status_code=400, detail=f"unknown format {format!r}")

    @app.delete("/me/data")
    async def purge_me(user_id: str = Depends(current_user)):
        for (owner, run_id), entry in list(registry._entries.items()):
            if owner == user_id:
                if entry.handle.state == RUNNING:
                    entry.cancel.set()
                registry._entries.pop((owner, run_id), None)
        report = sim_store.purge_user(user_id)
        return {"purged": report}

    return app


def _handle_json(handle: RunHandle) -> dict:
    return {
        "run_id": handle.run_id,
        "state": handle.state,
        "created_at": handle.created_at,
    }


def create_default_app() -> FastAPI:
    """Uvicorn factory entry point: real clock, ./data directory."""
    return create_app(ServiceSettings(data_dir=Path("data")))
