import random

import pytest

from surveysim.clock import SimulatedClock
from surveysim.metrics import MetricsHub, UnknownRunError
from tests.conftest import run_async


def hub_with_run(total=10, coalesce=0.25):
    clock = SimulatedClock()
    hub = MetricsHub(clock, coalesce_interval=coalesce)
    hub.register_run("r1", total)
    return hub, clock


def feed(hub, *events, run_id="r1"):
    for event in events:
        hub.record({"run_id": run_id, **event})


class TestCounters:
    def test_partition_after_mixed_events(self):
        hub, _ = hub_with_run(total=10)
        for _ in range(4):
            feed(hub, {"type": "dispatched"})
        for _ in range(3):
            feed(hub, {"type": "completed"})
        feed(hub, {"type": "exhausted"})
        snap = hub.snapshot("r1")
        assert snap.completed == 3
        assert snap.failed_exhausted == 1
        assert snap.pending + snap.in_flight == 6
        assert snap.completed + snap.failed_exhausted + snap.in_flight + snap.pending == 10

    def test_zero_events(self):
        hub, _ = hub_with_run(total=10)
        snap = hub.snapshot("r1")
        assert snap.completed == snap.failed_exhausted == snap.in_flight == 0
        assert snap.pending == 10
        assert snap.eta_seconds is None

    def test_usage_accumulates(self):
        hub, _ = hub_with_run()
        feed(hub, {"type": "usage", "input_tokens": 100, "output_tokens": 50})
        feed(hub, {"type": "usage", "input_tokens": 100, "output_tokens": 50})
        snap = hub.snapshot("r1")
        assert snap.tokens_in == 200
        assert snap.tokens_out == 100

    def test_cost_uses_configured_prices(self):
        clock = SimulatedClock()
        hub = MetricsHub(clock)
        hub.register_run("r1", 10, price_in=0.001, price_out=0.002)
        feed(hub, {"type": "usage", "input_tokens": 1000, "output_tokens": 500})
        assert hub.snapshot("r1").estimated_cost == pytest.approx(1.0 + 1.0)

    def test_unknown_run_rejected(self):
        hub, _ = hub_with_run()
        with pytest.raises(UnknownRunError):
            hub.snapshot("nope")

    def test_rpm_window_replay(self):
        # oracle: 5 dispatches inside the trailing 60s, older ones pruned
        hub, clock = hub_with_run()

        async def scenario():
            feed(hub, {"type": "dispatched", "at": 0.0})
            await clock.sleep(100.0)
            for offset in range(5):
                feed(hub, {"type": "dispatched", "at": 100.0 + offset})
            return hub.snapshot("r1").current_rpm

        assert run_async(scenario()) == 5

    def test_eta_from_trailing_completion_rate(self):
        hub, clock = hub_with_run(total=10)

        async def scenario():
            for i in range(4):
                feed(hub, {"type": "dispatched", "at": float(i)})
                feed(hub, {"type": "completed", "at": float(i)})
            await clock.sleep(10.0)
            return hub.snapshot("r1")

        snap = run_async(scenario())
        # 4 completions in the window -> rate 4/60 per second; 6 pending
        assert snap.eta_seconds == pytest.approx(6 / (4 / 60.0))


class TestMonotonicityAndConservation:
    def test_random_interleavings(self):
        rng = random.Random(7)
        for _ in range(50):
            total = rng.randint(1, 30)
            hub, _ = hub_with_run(total=total)
            in_flight = 0
            done = 0
            prev = hub.snapshot("r1")
            for _ in range(200):
                if done >= total:
                    break
                choices = []
                if in_flight + done < total:
                    choices.append("dispatched")
                if in_flight > 0:
                    choices.extend(["completed", "exhausted", "retried", "repaired", "usage"])
                kind = rng.choice(choices)
                event = {"type": kind}
                if kind == "usage":
                    event |= {"input_tokens": rng.randint(0, 50), "output_tokens": rng.randint(0, 50)}
                feed(hub, event)
                if kind == "dispatched":
                    in_flight += 1
                elif kind in ("completed", "exhausted"):
                    in_flight -= 1
                    done += 1
                elif kind == "retried":
                    in_flight -= 1
                snap = hub.snapshot("r1")
                assert (
                    snap.completed + snap.failed_exhausted + snap.in_flight + snap.pending
                    == total
                )
                assert snap.pending >= 0 and snap.in_flight >= 0
                assert snap.completed >= prev.completed
                assert snap.failed_exhausted >= prev.failed_exhausted
                assert snap.retries_total >= prev.retries_total
                assert snap.tokens_in >= prev.tokens_in
                assert snap.tokens_out >= prev.tokens_out
                prev = snap


class TestSubscriptions:
    def test_final_snapshot_always_delivered(self):
        hub, clock = hub_with_run(total=3)

        async def scenario():
            sub = hub.subscribe("r1")
            for _ in range(3):
                feed(hub, {"type": "dispatched"})
                feed(hub, {"type": "completed"})
            hub.finish_run("r1")
            return [snap async for snap in sub]

        snapshots = run_async(scenario())
        last = snapshots[-1]
        assert last.completed == 3
        assert last.pending == 0
        assert last.in_flight == 0

    def test_coalescing_rate_bound(self):
        hub, clock = hub_with_run(total=1000, coalesce=0.25)

        async def scenario():
            sub = hub.subscribe("r1")
            # 100 events over 1 virtual second: at most 4/s may be emitted
            for i in range(100):
                feed(hub, {"type": "dispatched"})
                await clock.sleep(0.01)
            hub.finish_run("r1")
            return [snap async for snap in sub]

        snapshots = run_async(scenario())
        body = snapshots[1:-1]  # subscribe-time and forced-final excluded
        for a, b in zip(body, body[1:]):
            assert b.at - a.at >= 0.25 - 1e-9
        # never reordered, and the terminal state is the true total
        dispatched = [s.in_flight for s in snapshots]
        assert snapshots[-1].in_flight == 100

    def test_two_subscribers_identical_finals(self):
        hub, _ = hub_with_run(total=2)

        async def scenario():
            sub1 = hub.subscribe("r1")
            sub2 = hub.subscribe("r1")
            feed(hub, {"type": "dispatched"})
            feed(hub, {"type": "completed"})
            hub.finish_run("r1")
            finals = []
            for sub in (sub1, sub2):
                last = None
                async for snap in sub:
                    last = snap
                finals.append(last)
            return finals

        finals = run_async(scenario())
        assert finals[0] == finals[1]

    def test_subscribe_after_finish_yields_terminal(self):
        hub, _ = hub_with_run(total=1)

        async def scenario():
            feed(hub, {"type": "dispatched"})
            feed(hub, {"type": "completed"})
            hub.finish_run("r1")
            sub = hub.subscribe("r1")
            return [snap async for snap in sub]

        snapshots = run_async(scenario())
        assert len(snapshots) == 1
        assert snapshots[0].completed == 1
