// Run configuration form model with inline validation.
//
// The rules mirror the server's config validation, so most rejections are
// caught before submit; server-side rejection reasons are mapped back onto
// the offending fields when they do occur.

import type { SimulationConfigModel } from "./types.js";

export type FieldErrors = Record<string, string>;

export function defaultConfigModel(): SimulationConfigModel {
  return {
    run_seed: 42,
    population_size: 100,
    profile_schema: null,
    provider_id: "mock",
    model_name: "mock-model",
    temperature: 0.7,
    top_p: 1.0,
    max_output_tokens: 256,
    max_concurrency: 8,
    rpm_limit: 120,
    tpm_limit: 90000,
    retry: { max_retries: 5, base_delay: 1.0, max_delay: 60.0, jitter_fraction: 0.1 },
    format_repair_attempts: 2,
  };
}

export function validateConfigModel(model: SimulationConfigModel): FieldErrors {
  const errors: FieldErrors = {};
  if (!Number.isInteger(model.population_size) || model.population_size < 1) {
    errors["population_size"] = "must be >= 1";
  }
  if (!Number.isInteger(model.max_concurrency) || model.max_concurrency < 1) {
    errors["max_concurrency"] = "must be >= 1";
  }
  if (!Number.isInteger(model.rpm_limit) || model.rpm_limit < 1) {
    errors["rpm_limit"] = "must be >= 1";
  }
  if (!Number.isInteger(model.tpm_limit) || model.tpm_limit < 1) {
    errors["tpm_limit"] = "must be >= 1";
  }
  if (!Number.isInteger(model.max_output_tokens) || model.max_output_tokens < 1) {
    errors["max_output_tokens"] = "must be >= 1";
  }
  if (model.temperature < 0 || model.temperature > 2) {
    errors["temperature"] = "out of provider range [0, 2]";
  }
  if (!(model.top_p > 0 && model.top_p <= 1)) {
    errors["top_p"] = "out of (0,1]";
  }
  if (model.format_repair_attempts < 0) {
    errors["format_repair_attempts"] = "must be >= 0";
  }
  if (!model.provider_id) {
    errors["provider_id"] = "must be set";
  }
  if (!model.model_name) {
    errors["model_name"] = "must be set";
  }
  if (model.retry.max_retries < 0) {
    errors["retry.max_retries"] = "must be >= 0";
  }
  if (model.retry.base_delay < 0) {
    errors["retry.base_delay"] = "must be >= 0";
  }
  if (model.retry.base_delay > model.retry.max_delay) {
    errors["retry.base_delay"] = "must not exceed retry.max_delay";
  }
  if (model.retry.jitter_fraction < 0 || model.retry.jitter_fraction > 1) {
    errors["retry.jitter_fraction"] = "out of [0,1]";
  }
  if (model.profile_schema === null || model.profile_schema === undefined) {
    errors["profile_schema"] = "a profile schema is required";
  }
  return errors;
}

// Server rejections arrive as "field: message" problem strings; hang each
// one on its field so the form can highlight it.
export function mapServerProblems(problems: string[]): FieldErrors {
  const errors: FieldErrors = {};
  for (const problem of problems) {
    const split = problem.indexOf(":");
    if (split > 0) {
      const field = problem.slice(0, split).trim().replace(/^profile_schema\./, "profile_schema.");
      errors[field] = problem.slice(split + 1).trim();
    } else {
      errors["_form"] = problem;
    }
  }
  return errors;
}

const DRAFT_KEY = "surveysim.config.draft";

export interface DraftStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export function saveDraft(model: SimulationConfigModel, store: DraftStore): void {
  store.setItem(DRAFT_KEY, JSON.stringify(model));
}

export function loadDraft(store: DraftStore): SimulationConfigModel | null {
  const raw = store.getItem(DRAFT_KEY);
  if (raw === null) return null;
  try {
    return JSON.parse(raw) as SimulationConfigModel;
  } catch {
    return null;
  }
}

export function clearDraft(store: DraftStore): void {
  store.removeItem(DRAFT_KEY);
}
