// Wire formats of the service API. Field names mirror the server exactly;
// the dashboard never invents or recomputes any of these values.

export type RunState =
  | "draft"
  | "running"
  | "cancelling"
  | "completed"
  | "failed"
  | "cancelled";

export const TERMINAL_STATES: ReadonlySet<RunState> = new Set([
  "completed",
  "failed",
  "cancelled",
]);

export interface MetricsSnapshot {
  run_id: string;
  total_jobs: number;
  completed: number;
  failed_exhausted: number;
  in_flight: number;
  pending: number;
  retries_total: number;
  format_repairs_total: number;
  tokens_in: number;
  tokens_out: number;
  current_rpm: number;
  estimated_cost: number;
  eta_seconds: number | null;
  at: number;
}

export interface UncompletedJob {
  agent_id: string;
  question_id: string;
  attempts: number;
  last_error: string | null;
}

export interface ManifestSnapshot {
  run_id: string;
  config_hash: string;
  completed: [string, string][];
  uncompleted: UncompletedJob[];
  stop_reason: string;
  directive_version: string;
}

export interface RunHandle {
  run_id: string;
  state: RunState;
  created_at: number;
}

export interface RunDetail extends RunHandle {
  total_jobs?: number;
  answers_persisted?: number;
  manifest?: ManifestSnapshot;
}

export interface RetryPolicyModel {
  max_retries: number;
  base_delay: number;
  max_delay: number;
  jitter_fraction: number;
}

export interface SimulationConfigModel {
  run_seed: number;
  population_size: number;
  profile_schema: unknown;
  provider_id: string;
  model_name: string;
  temperature: number;
  top_p: number;
  max_output_tokens: number;
  max_concurrency: number;
  rpm_limit: number;
  tpm_limit: number;
  retry: RetryPolicyModel;
  format_repair_attempts: number;
  token_price_in?: number;
  token_price_out?: number;
}

export interface AnswerRecordRow {
  agent_id: string;
  question_id: string;
  agent_index: number;
  question_index: number;
  value: unknown;
  reasoning: string;
  raw: string;
  input_tokens: number;
  output_tokens: number;
  attempts: number;
  created_at: number;
  status: string;
  config_hash: string;
  directive_version: string;
}
