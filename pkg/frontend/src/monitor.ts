// Live run monitor view state.
//
// Counters shown on screen are verbatim copies of the latest received
// snapshot's fields: this module performs no arithmetic on them, so the
// dashboard can never disagree with the server about progress.

import type { ApiClient } from "./api.js";
import type { MetricsSnapshot, RunState } from "./types.js";
import { TERMINAL_STATES } from "./types.js";

export interface MonitorCounters {
  total_jobs: string;
  completed: string;
  failed_exhausted: string;
  in_flight: string;
  pending: string;
  retries_total: string;
  format_repairs_total: string;
  tokens_in: string;
  tokens_out: string;
  current_rpm: string;
  estimated_cost: string;
  eta: string;
}

export interface MonitorDisplay {
  state: RunState;
  counters: MonitorCounters | null;
  stale: boolean;
  cancelEnabled: boolean;
  resumeEnabled: boolean;
  downloadEnabled: boolean;
}

export function formatEta(etaSeconds: number | null): string {
  if (etaSeconds === null || !isFinite(etaSeconds)) return "–";
  const total = Math.round(etaSeconds);
  const minutes = Math.floor(total / 60);
  const seconds = total % 60;
  return minutes > 0 ? `${minutes}m ${seconds}s` : `${seconds}s`;
}

export function countersFrom(snapshot: MetricsSnapshot): MonitorCounters {
  return {
    total_jobs: String(snapshot.total_jobs),
    completed: String(snapshot.completed),
    failed_exhausted: String(snapshot.failed_exhausted),
    in_flight: String(snapshot.in_flight),
    pending: String(snapshot.pending),
    retries_total: String(snapshot.retries_total),
    format_repairs_total: String(snapshot.format_repairs_total),
    tokens_in: String(snapshot.tokens_in),
    tokens_out: String(snapshot.tokens_out),
    current_rpm: String(snapshot.current_rpm),
    estimated_cost: snapshot.estimated_cost.toFixed(4),
    eta: formatEta(snapshot.eta_seconds),
  };
}

export class MonitorView {
  state: RunState = "running";
  lastSnapshot: MetricsSnapshot | null = null;
  stale = false;
  private cancelRequested = false;

  constructor(
    private api: ApiClient,
    public runId: string,
  ) {}

  handleSnapshot(snapshot: MetricsSnapshot): void {
    this.lastSnapshot = snapshot;
  }

  handleStale(stale: boolean): void {
    this.stale = stale;
  }

  handleRunState(state: RunState): void {
    this.state = state;
    if (TERMINAL_STATES.has(state)) {
      this.cancelRequested = false;
    }
  }

  async requestCancel(): Promise<void> {
    // disabled until a terminal state arrives; repeated clicks do nothing
    if (this.cancelRequested || this.state !== "running") return;
    this.cancelRequested = true;
    const handle = await this.api.cancelRun(this.runId);
    this.handleRunStateKeepCancelPending(handle.state);
  }

  private handleRunStateKeepCancelPending(state: RunState): void {
    this.state = state;
    if (TERMINAL_STATES.has(state)) this.cancelRequested = false;
  }

  async requestResume(): Promise<void> {
    if (this.state !== "failed" && this.state !== "cancelled") return;
    const handle = await this.api.resumeRun(this.runId);
    this.handleRunState(handle.state);
  }

  display(): MonitorDisplay {
    return {
      state: this.state,
      counters: this.lastSnapshot ? countersFrom(this.lastSnapshot) : null,
      stale: this.stale,
      cancelEnabled: this.state === "running" && !this.cancelRequested,
      resumeEnabled: this.state === "failed" || this.state === "cancelled",
      downloadEnabled: TERMINAL_STATES.has(this.state),
    };
  }
}
