import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { fakeFetch } from "./helpers.js";

describe("api client", () => {
  it("attaches the bearer token after login", async () => {
    const { fetch, requests } = fakeFetch((request) => {
      if (request.url.endsWith("/auth/login")) return { body: { token: "tok123" } };
      return { body: { run_id: "r", state: "running", created_at: 0 } };
    });
    const api = new ApiClient("http://svc", fetch);
    await api.login("ana", "pw");
    await api.getRun("r");
    expect(requests[1].headers["Authorization"]).toBe("Bearer tok123");
  });

  it("maps error bodies to ApiError with detail", async () => {
    const { fetch } = fakeFetch(() => ({
      status: 400,
      body: { detail: { problems: ["max_concurrency: must be >= 1"] } },
    }));
    const api = new ApiClient("", fetch);
    api.token = "t";
    const error = await api
      .startRun({} as never, "ref")
      .then(() => null)
      .catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(400);
    expect((error as ApiError).detail).toHaveProperty("problems");
  });

  it("parses jsonl result pages", async () => {
    const { fetch, requests } = fakeFetch(() => ({
      text: '{"agent_id": "a1", "value": 4}\n{"agent_id": "a2", "value": 5}\n',
    }));
    const api = new ApiClient("", fetch);
    api.token = "t";
    const rows = await api.fetchResultsPage("r", 100, 50);
    expect(rows).toHaveLength(2);
    expect(requests[0].url).toContain("offset=100");
    expect(requests[0].url).toContain("limit=50");
  });

  it("puts the token in the metrics stream url (EventSource cannot set headers)", () => {
    const api = new ApiClient("http://svc");
    api.token = "se+cr/et";
    expect(api.metricsStreamUrl("r1")).toBe(
      `http://svc/runs/r1/metrics?token=${encodeURIComponent("se+cr/et")}`,
    );
  });

  it("state-changing actions map 1:1 to endpoints", async () => {
    const calls: string[] = [];
    const { fetch } = fakeFetch((request) => {
      calls.push(`${request.method} ${new URL(request.url, "http://x").pathname}`);
      return { body: { run_id: "r", state: "running", created_at: 0, purged: {} } };
    });
    const api = new ApiClient("", fetch);
    api.token = "t";
    await api.startRun({} as never, "ref");
    await api.cancelRun("r");
    await api.resumeRun("r");
    await api.purgeMyData();
    expect(calls).toEqual([
      "POST /runs",
      "POST /runs/r/cancel",
      "POST /runs/r/resume",
      "DELETE /me/data",
    ]);
  });
});
