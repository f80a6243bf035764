// Typed client over the service HTTP API. Every dashboard action maps 1:1
// to one of these calls; there is no other backend surface.

import type {
  AnswerRecordRow,
  RunDetail,
  RunHandle,
  SimulationConfigModel,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  token: string | null = null;

  constructor(
    public baseUrl: string = "",
    private fetchImpl: FetchLike = fetch,
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const headers: Record<string, string> = { ...extra };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method, headers: this.headers() };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
      (init.headers as Record<string, string>)["Content-Type"] = "application/json";
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail: unknown = response.statusText;
      try {
        detail = (await response.json()).detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  async register(login: string, secret: string): Promise<string> {
    const body = await this.request<{ user_id: string }>("POST", "/auth/register", {
      login,
      secret,
    });
    return body.user_id;
  }

  async login(login: string, secret: string): Promise<void> {
    const body = await this.request<{ token: string }>("POST", "/auth/login", {
      login,
      secret,
    });
    this.token = body.token;
  }

  async uploadDocument(
    kind: "survey" | "schema" | "population",
    format: string,
    file: File | Blob,
    name: string,
  ): Promise<{ upload_id: string; questions: number }> {
    const form = new FormData();
    form.append("kind", kind);
    form.append("format", format);
    form.append("file", file, name);
    const response = await this.fetchImpl(`${this.baseUrl}/uploads`, {
      method: "POST",
      headers: this.headers(),
      body: form,
    });
    if (!response.ok) {
      throw new ApiError(response.status, (await response.json()).detail);
    }
    return await response.json();
  }

  startRun(
    config: SimulationConfigModel,
    surveyRef: string,
    populationRef?: string,
    idempotencyKey?: string,
  ): Promise<RunHandle> {
    return this.request<RunHandle>("POST", "/runs", {
      config,
      survey_ref: surveyRef,
      population_ref: populationRef ?? null,
      idempotency_key: idempotencyKey ?? null,
    });
  }

  getRun(runId: string): Promise<RunDetail> {
    return this.request<RunDetail>("GET", `/runs/${runId}`);
  }

  cancelRun(runId: string): Promise<RunHandle> {
    return this.request<RunHandle>("POST", `/runs/${runId}/cancel`);
  }

  resumeRun(runId: string): Promise<RunHandle> {
    return this.request<RunHandle>("POST", `/runs/${runId}/resume`);
  }

  metricsStreamUrl(runId: string): string {
    const token = this.token ? `?token=${encodeURIComponent(this.token)}` : "";
    return `${this.baseUrl}/runs/${runId}/metrics${token}`;
  }

  async fetchResultsPage(
    runId: string,
    offset: number,
    limit: number,
  ): Promise<AnswerRecordRow[]> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/runs/${runId}/results?format=jsonl&offset=${offset}&limit=${limit}`,
      { headers: this.headers() },
    );
    if (!response.ok) {
      throw new ApiError(response.status, response.statusText);
    }
    const text = await response.text();
    return text
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as AnswerRecordRow);
  }

  downloadUrl(runId: string, format: "csv" | "jsonl"): string {
    return `${this.baseUrl}/runs/${runId}/results?format=${format}`;
  }

  async purgeMyData(): Promise<Record<string, number>> {
    const body = await this.request<{ purged: Record<string, number> }>(
      "DELETE",
      "/me/data",
    );
    return body.purged;
  }
}
