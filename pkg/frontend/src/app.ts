// Dashboard shell: login, configure & launch, live monitor, data viewer.
// All state-changing actions go through the ApiClient; views re-render from
// plain state objects owned by the tested modules.

import { ApiClient, ApiError } from "./api.js";
import {
  clearDraft,
  defaultConfigModel,
  loadDraft,
  mapServerProblems,
  saveDraft,
  validateConfigModel,
} from "./configForm.js";
import { DataViewer, viewerSource } from "./dataViewer.js";
import { MonitorView, countersFrom } from "./monitor.js";
import { MetricsStream } from "./sse.js";
import type { MetricsSnapshot, RunDetail, SimulationConfigModel } from "./types.js";
import { TERMINAL_STATES } from "./types.js";

const api = new ApiClient(
  (window as unknown as { SURVEYSIM_API?: string }).SURVEYSIM_API ?? "",
);

const root = document.getElementById("app")!;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function navigate(hash: string): void {
  window.location.hash = hash;
}

function render(): void {
  root.replaceChildren();
  if (!api.token) {
    root.append(loginView());
    return;
  }
  const hash = window.location.hash;
  const runMatch = hash.match(/^#\/runs\/([^/]+)(\/data)?$/);
  if (runMatch && runMatch[2]) {
    root.append(dataView(runMatch[1]));
  } else if (runMatch) {
    root.append(monitorView(runMatch[1]));
  } else {
    root.append(configureView());
  }
}

function loginView(): HTMLElement {
  const status = el("p", { class: "status" });
  const login = el("input", { placeholder: "login name" });
  const secret = el("input", { placeholder: "secret", type: "password" });

  async function submit(registerFirst: boolean): Promise<void> {
    try {
      if (registerFirst) await api.register(login.value, secret.value);
      await api.login(login.value, secret.value);
      render();
    } catch (err) {
      status.textContent = err instanceof ApiError ? String(err.message) : "network error";
    }
  }

  return el(
    "section",
    { class: "card" },
    el("h1", {}, "surveysim"),
    login,
    secret,
    el("div", { class: "row" },
      button("Log in", () => submit(false)),
      button("Register", () => submit(true))),
    status,
  );
}

function button(label: string, onClick: () => void, attrs: Record<string, string> = {}): HTMLButtonElement {
  const node = el("button", attrs, label);
  node.addEventListener("click", onClick);
  return node;
}

function configureView(): HTMLElement {
  const draftStore = window.localStorage;
  const model: SimulationConfigModel = loadDraft(draftStore) ?? defaultConfigModel();
  const status = el("p", { class: "status" });
  const errorsBox = el("ul", { class: "errors" });
  let surveyRef: string | null = null;

  function numberField(name: keyof SimulationConfigModel, label: string): HTMLElement {
    const input = el("input", { value: String(model[name] ?? "") });
    input.addEventListener("change", () => {
      (model as unknown as Record<string, unknown>)[name] = Number(input.value);
      saveDraft(model, draftStore);
      showErrors(validateConfigModel(model));
    });
    return el("label", {}, label, input);
  }

  function showErrors(errors: Record<string, string>): void {
    errorsBox.replaceChildren(
      ...Object.entries(errors).map(([field, message]) =>
        el("li", {}, `${field}: ${message}`)),
    );
  }

  const schemaArea = el("textarea", {
    rows: "8",
    placeholder: "profile schema as JSON ({\"attributes\": [...]})",
  });
  schemaArea.value = model.profile_schema ? JSON.stringify(model.profile_schema, null, 2) : "";
  schemaArea.addEventListener("change", () => {
    try {
      model.profile_schema = JSON.parse(schemaArea.value);
      saveDraft(model, draftStore);
    } catch {
      showErrors({ profile_schema: "not valid JSON" });
    }
  });

  const surveyInput = el("input", { type: "file" });
  const surveyStatus = el("span", {}, "no survey uploaded");
  surveyInput.addEventListener("change", async () => {
    const file = surveyInput.files?.[0];
    if (!file) return;
    const format = file.name.endsWith(".csv") ? "delimited-table" : "structured-text";
    try {
      const uploaded = await api.uploadDocument("survey", format, file, file.name);
      surveyRef = uploaded.upload_id;
      surveyStatus.textContent = `${file.name}: ${uploaded.questions} questions`;
    } catch (err) {
      surveyStatus.textContent = err instanceof ApiError ? err.message : "upload failed";
    }
  });

  async function launch(): Promise<void> {
    const errors = validateConfigModel(model);
    if (!surveyRef) errors["survey"] = "upload a survey first";
    showErrors(errors);
    if (Object.keys(errors).length > 0) return;
    try {
      const handle = await api.startRun(model, surveyRef!);
      clearDraft(draftStore);
      navigate(`#/runs/${handle.run_id}`);
    } catch (err) {
      if (err instanceof ApiError && typeof err.detail === "object" && err.detail !== null) {
        const problems = (err.detail as { problems?: string[] }).problems;
        if (problems) {
          showErrors(mapServerProblems(problems));
          return;
        }
      }
      // network failure: the draft is retained, invite a retry
      status.textContent = "launch failed; your draft is saved, try again";
    }
  }

  return el(
    "section",
    { class: "card" },
    el("h1", {}, "configure a run"),
    el("div", { class: "grid" },
      numberField("run_seed", "run seed"),
      numberField("population_size", "population size"),
      numberField("temperature", "temperature"),
      numberField("top_p", "top_p"),
      numberField("max_output_tokens", "max output tokens"),
      numberField("max_concurrency", "max concurrency"),
      numberField("rpm_limit", "rpm limit"),
      numberField("tpm_limit", "tpm limit")),
    el("label", {}, "profile schema", schemaArea),
    el("label", {}, "survey upload", surveyInput),
    surveyStatus,
    button("Launch run", launch),
    errorsBox,
    status,
  );
}

function monitorView(runId: string): HTMLElement {
  const view = new MonitorView(api, runId);
  const countersBox = el("dl", { class: "counters" });
  const stateBadge = el("span", { class: "badge" });
  const staleBadge = el("span", { class: "badge stale hidden" }, "stream stale, reconnecting");
  const cancelButton = button("Cancel", async () => {
    await view.requestCancel();
    paint();
  });
  const resumeButton = button("Resume", async () => {
    await view.requestResume();
    paint();
    poll();
  });
  const downloadLink = el("a", {}, "Download CSV");
  const dataLink = button("Open data viewer", () => navigate(`#/runs/${runId}/data`));

  function paint(): void {
    const display = view.display();
    stateBadge.textContent = display.state;
    stateBadge.className = `badge state-${display.state}`;
    staleBadge.classList.toggle("hidden", !display.stale);
    cancelButton.disabled = !display.cancelEnabled;
    resumeButton.disabled = !display.resumeEnabled;
    downloadLink.setAttribute(
      "href",
      display.downloadEnabled ? api.downloadUrl(runId, "csv") : "#",
    );
    countersBox.replaceChildren();
    if (display.counters) {
      for (const [name, value] of Object.entries(display.counters)) {
        countersBox.append(el("dt", {}, name.replaceAll("_", " ")), el("dd", {}, value));
      }
    }
  }

  const stream = new MetricsStream(
    api.metricsStreamUrl(runId),
    (snapshot: MetricsSnapshot) => {
      view.handleSnapshot(snapshot);
      paint();
    },
    (stale) => {
      view.handleStale(stale);
      paint();
    },
  );
  stream.connect();

  let pollTimer: number | undefined;
  async function poll(): Promise<void> {
    const detail: RunDetail = await api.getRun(runId);
    view.handleRunState(detail.state);
    paint();
    if (!TERMINAL_STATES.has(detail.state)) {
      pollTimer = window.setTimeout(poll, 1500);
    }
  }
  void poll();

  window.addEventListener("hashchange", () => {
    stream.close();
    if (pollTimer !== undefined) window.clearTimeout(pollTimer);
  }, { once: true });

  paint();
  return el(
    "section",
    { class: "card" },
    el("h1", {}, `run ${runId}`),
    el("div", { class: "row" }, stateBadge, staleBadge),
    countersBox,
    el("div", { class: "row" }, cancelButton, resumeButton, downloadLink, dataLink),
  );
}

function dataView(runId: string): HTMLElement {
  const table = el("table");
  const pager = el("div", { class: "row" });
  const filterInput = el("input", { placeholder: "filter by question_id" });
  const status = el("p", { class: "status" });
  let viewer: DataViewer | null = null;
  let pageIndex = 0;

  async function paint(): Promise<void> {
    if (!viewer) return;
    const rows = await viewer.page(pageIndex);
    table.replaceChildren(
      el("tr", {},
        ...["agent", "question", "value", "reasoning", "attempts"].map((h) => el("th", {}, h))),
      ...rows.map((row) =>
        el("tr", {},
          el("td", {}, row.agent_id),
          el("td", {}, row.question_id),
          el("td", {}, JSON.stringify(row.value)),
          el("td", {}, row.reasoning),
          el("td", {}, String(row.attempts)))),
    );
    status.textContent = `page ${pageIndex + 1} of ${viewer.pages}`;
  }

  async function load(): Promise<void> {
    const detail = await api.getRun(runId);
    const total = detail.answers_persisted ?? 0;
    viewer = new DataViewer(api, runId, total, 50);
    if (viewerSource(detail) === "uncompleted" && detail.manifest) {
      // nothing persisted: show the manifest's uncompleted list instead
      table.replaceChildren(
        el("tr", {}, el("th", {}, "agent"), el("th", {}, "question"), el("th", {}, "last error")),
        ...detail.manifest.uncompleted.map((job) =>
          el("tr", {},
            el("td", {}, job.agent_id),
            el("td", {}, job.question_id),
            el("td", {}, job.last_error ?? ""))),
      );
      status.textContent = "no completed answers; showing uncompleted jobs";
      return;
    }
    pager.replaceChildren(
      button("Prev", () => { if (pageIndex > 0) { pageIndex -= 1; void paint(); } }),
      button("Next", () => {
        if (viewer && pageIndex + 1 < viewer.pages) { pageIndex += 1; void paint(); }
      }),
    );
    await paint();
  }

  filterInput.addEventListener("change", () => {
    viewer?.setQuestionFilter(filterInput.value.trim() || null);
    void paint();
  });

  void load();
  return el(
    "section",
    { class: "card wide" },
    el("h1", {}, `results of ${runId}`),
    el("div", { class: "row" },
      filterInput,
      button("Back to monitor", () => navigate(`#/runs/${runId}`))),
    table,
    pager,
    status,
  );
}

window.addEventListener("hashchange", render);
render();

export { countersFrom };
