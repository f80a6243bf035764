"""Record a real 1000-agent mock run's metrics stream as a test fixture.

Regenerate with:  python3 frontend/scripts/record_fixture.py
Writes frontend/tests/fixtures/monitor-run.json: every coalesced snapshot a
dashboard subscriber would have received over the run, in order.
"""

import asyncio
import json
from pathlib import Path

from surveysim.clock import SimulatedClock
from surveysim.config import RetryPolicy, SimulationConfig
from surveysim.metrics import MetricsHub
from surveysim.profiles import schema_from_mapping
from surveysim.providers import MockProvider, MockScript
from surveysim.runner import execute_run, prepare_run
from surveysim.scheduler import MemoryAnswerSink, MemoryCheckpointSink, RunSinks
from surveysim.survey import parse_survey_document

OUT = Path(__file__).parent.parent / "tests" / "fixtures" / "monitor-run.json"

SCHEMA = schema_from_mapping(
    {
        "attributes": [
            {"name": "age", "kind": "integer-range", "low": 18, "high": 90},
            {"name": "gender", "kind": "categorical", "options": ["male", "female", "nonbinary"]},
        ]
    }
)

SURVEY = parse_survey_document(
    "question_id,text,answer_kind,options,answer_instruction\n"
    "q1,How satisfied are you with your life?,likert,1|7,\n"
)


async def main() -> None:
    clock = SimulatedClock()
    config = SimulationConfig(
        run_seed=1000,
        population_size=1000,
        profile_schema=SCHEMA,
        max_concurrency=16,
        rpm_limit=10**6,
        tpm_limit=10**9,
        retry=RetryPolicy(max_retries=3, base_delay=0.5, max_delay=10.0, jitter_fraction=0.0),
        token_price_in=0.5e-6,
        token_price_out=1.5e-6,
    )
    provider = MockProvider(MockScript(failure_rate=0.02, latency=0.2), seed=7, clock=clock)
    prepared = prepare_run(config, SURVEY, run_id="fixture-1000")
    hub = MetricsHub(clock)
    hub.register_run(prepared.run_id, prepared.total_jobs, config.token_price_in, config.token_price_out)
    sinks = RunSinks(
        answers=MemoryAnswerSink(), checkpoints=MemoryCheckpointSink(), metrics=hub
    )

    snapshots = []

    async def collect():
        async for snapshot in hub.subscribe(prepared.run_id):
            snapshots.append(snapshot.to_mapping())

    collector = asyncio.get_event_loop().create_task(collect())
    result = await execute_run(prepared, provider, sinks, clock)
    hub.finish_run(prepared.run_id)
    await collector

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(
        json.dumps(
            {
                "run_id": prepared.run_id,
                "total_jobs": prepared.total_jobs,
                "completed": len(result.manifest.completed),
                "final_state": "completed",
                "snapshots": snapshots,
            },
            indent=1,
        )
    )
    print(f"wrote {len(snapshots)} snapshots to {OUT}")


if __name__ == "__main__":
    asyncio.run(main())
