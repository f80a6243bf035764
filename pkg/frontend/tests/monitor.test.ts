// Monitor view against the recorded 1000-agent run: every received
// snapshot's counters must be rendered verbatim, and the cancel control
// must pass through "cancelling" to "cancelled".

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { MonitorView, countersFrom, formatEta } from "../src/monitor.js";
import { MetricsStream } from "../src/sse.js";
import type { MetricsSnapshot } from "../src/types.js";
import { FakeEventSource, fakeFetch } from "./helpers.js";

const fixture = JSON.parse(
  readFileSync(new URL("./fixtures/monitor-run.json", import.meta.url), "utf-8"),
) as { total_jobs: number; snapshots: MetricsSnapshot[] };

function makeView(handler: Parameters<typeof fakeFetch>[0] = () => ({ body: {} })) {
  const { fetch, requests } = fakeFetch(handler);
  const api = new ApiClient("", fetch);
  api.token = "t";
  return { view: new MonitorView(api, "run-1"), requests };
}

describe("monitor view on a recorded 1000-agent run", () => {
  it("renders every snapshot's counters verbatim", () => {
    const { view } = makeView();
    const sources: FakeEventSource[] = [];
    const stream = new MetricsStream(
      "/runs/run-1/metrics",
      (snapshot) => view.handleSnapshot(snapshot),
      () => {},
      { eventSourceFactory: (url) => {
          const source = new FakeEventSource(url);
          sources.push(source);
          return source;
        } },
    );
    stream.connect();
    sources[0].open();

    expect(fixture.snapshots.length).toBeGreaterThan(10);
    for (const snapshot of fixture.snapshots) {
      sources[0].emit(snapshot);
      const display = view.display(); // what the DOM layer paints
      expect(display.counters).not.toBeNull();
      const counters = display.counters!;
      // verbatim: each rendered field is the exact snapshot field, no
      // client-side arithmetic
      expect(counters.total_jobs).toBe(String(snapshot.total_jobs));
      expect(counters.completed).toBe(String(snapshot.completed));
      expect(counters.failed_exhausted).toBe(String(snapshot.failed_exhausted));
      expect(counters.in_flight).toBe(String(snapshot.in_flight));
      expect(counters.pending).toBe(String(snapshot.pending));
      expect(counters.retries_total).toBe(String(snapshot.retries_total));
      expect(counters.format_repairs_total).toBe(String(snapshot.format_repairs_total));
      expect(counters.tokens_in).toBe(String(snapshot.tokens_in));
      expect(counters.tokens_out).toBe(String(snapshot.tokens_out));
      expect(counters.current_rpm).toBe(String(snapshot.current_rpm));
      expect(counters.estimated_cost).toBe(snapshot.estimated_cost.toFixed(4));
      expect(counters.eta).toBe(formatEta(snapshot.eta_seconds));
    }

    const last = fixture.snapshots[fixture.snapshots.length - 1];
    expect(view.lastSnapshot).toEqual(last);
    expect(last.completed).toBe(1000);
    expect(last.pending).toBe(0);
  });

  it("updates without any interaction as snapshots arrive", () => {
    const { view } = makeView();
    const before = view.display().counters;
    view.handleSnapshot(fixture.snapshots[5]);
    const after = view.display().counters;
    expect(before).toBeNull();
    expect(after).not.toBeNull();
  });
});

describe("cancel control", () => {
  it("passes through cancelling to cancelled and re-enables at terminal", async () => {
    const { view } = makeView((request) => {
      if (request.url.endsWith("/cancel")) {
        return { body: { run_id: "run-1", state: "cancelling", created_at: 0 } };
      }
      return { body: {} };
    });
    view.handleRunState("running");
    expect(view.display().cancelEnabled).toBe(true);

    await view.requestCancel();
    const during = view.display();
    expect(during.state).toBe("cancelling");
    expect(during.cancelEnabled).toBe(false); // disabled until terminal
    expect(during.downloadEnabled).toBe(false);

    view.handleRunState("cancelled");
    const after = view.display();
    expect(after.state).toBe("cancelled");
    expect(after.cancelEnabled).toBe(false); // not running anymore
    expect(after.resumeEnabled).toBe(true);
    expect(after.downloadEnabled).toBe(true);
  });

  it("ignores repeated cancel clicks while cancelling", async () => {
    let cancelCalls = 0;
    const { view } = makeView((request) => {
      if (request.url.endsWith("/cancel")) {
        cancelCalls += 1;
        return { body: { run_id: "run-1", state: "cancelling", created_at: 0 } };
      }
      return { body: {} };
    });
    view.handleRunState("running");
    await view.requestCancel();
    await view.requestCancel();
    await view.requestCancel();
    expect(cancelCalls).toBe(1);
  });

  it("switches controls to resume and download on terminal snapshots", () => {
    const { view } = makeView();
    view.handleRunState("failed");
    const display = view.display();
    expect(display.resumeEnabled).toBe(true);
    expect(display.downloadEnabled).toBe(true);
    expect(display.cancelEnabled).toBe(false);
  });
});

describe("eta formatting", () => {
  it("formats missing and present values", () => {
    expect(formatEta(null)).toBe("–");
    expect(formatEta(42)).toBe("42s");
    expect(formatEta(200)).toBe("3m 20s");
  });
});

describe("countersFrom", () => {
  it("is a pure field-by-field copy", () => {
    const snapshot = fixture.snapshots[10];
    const counters = countersFrom(snapshot);
    expect(Object.keys(counters)).toHaveLength(12);
  });
});
