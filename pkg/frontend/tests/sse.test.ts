import { describe, expect, it } from "vitest";

import { MetricsStream } from "../src/sse.js";
import type { MetricsSnapshot } from "../src/types.js";
import { FakeEventSource } from "./helpers.js";

function snapshot(completed: number): MetricsSnapshot {
  return {
    run_id: "r",
    total_jobs: 10,
    completed,
    failed_exhausted: 0,
    in_flight: 0,
    pending: 10 - completed,
    retries_total: 0,
    format_repairs_total: 0,
    tokens_in: 0,
    tokens_out: 0,
    current_rpm: 0,
    estimated_cost: 0,
    eta_seconds: null,
    at: 0,
  };
}

function setup() {
  const sources: FakeEventSource[] = [];
  const received: MetricsSnapshot[] = [];
  const staleChanges: boolean[] = [];
  const timers: { fn: () => void; ms: number }[] = [];
  const stream = new MetricsStream(
    "/runs/r/metrics?token=t",
    (snap) => received.push(snap),
    (stale) => staleChanges.push(stale),
    {
      eventSourceFactory: (url) => {
        const source = new FakeEventSource(url);
        sources.push(source);
        return source;
      },
      setTimeoutImpl: (fn, ms) => {
        timers.push({ fn, ms });
        return 0;
      },
      baseDelayMs: 100,
      maxDelayMs: 1000,
    },
  );
  return { stream, sources, received, staleChanges, timers };
}

describe("metrics stream", () => {
  it("delivers snapshots in order", () => {
    const { stream, sources, received } = setup();
    stream.connect();
    sources[0].open();
    sources[0].emit(snapshot(1));
    sources[0].emit(snapshot(2));
    expect(received.map((s) => s.completed)).toEqual([1, 2]);
  });

  it("marks the view stale on drop and resubscribes with backoff", () => {
    const { stream, sources, received, staleChanges, timers } = setup();
    stream.connect();
    sources[0].open();
    sources[0].emit(snapshot(3));

    sources[0].fail();
    expect(staleChanges).toEqual([true]);
    expect(timers).toHaveLength(1);
    expect(timers[0].ms).toBe(100);

    timers[0].fn(); // reconnect
    expect(sources).toHaveLength(2);
    sources[1].open();
    expect(staleChanges).toEqual([true, false]);
    sources[1].emit(snapshot(4));
    expect(received.map((s) => s.completed)).toEqual([3, 4]);
  });

  it("backs off exponentially up to the cap", () => {
    const { stream, sources, timers } = setup();
    stream.connect();
    for (let i = 0; i < 6; i += 1) {
      sources[i].fail();
      timers[i].fn();
    }
    expect(timers.map((t) => t.ms)).toEqual([100, 200, 400, 800, 1000, 1000]);
  });

  it("stops after close", () => {
    const { stream, sources, timers } = setup();
    stream.connect();
    stream.close();
    expect(sources[0].closed).toBe(true);
    sources[0].fail();
    expect(timers).toHaveLength(0); // no reconnect scheduled after close
  });

  it("skips malformed frames", () => {
    const { stream, sources, received } = setup();
    stream.connect();
    sources[0].onmessage?.({ data: "{broken" } as MessageEvent);
    sources[0].emit(snapshot(5));
    expect(received.map((s) => s.completed)).toEqual([5]);
  });
});
