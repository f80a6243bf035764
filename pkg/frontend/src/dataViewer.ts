// Paged data viewer over the run's results export.
//
// Pages are fetched lazily (offset/limit on the results endpoint) and
// cached; the per-question filter works within the loaded view.

import type { ApiClient } from "./api.js";
import type { AnswerRecordRow } from "./types.js";

export function pageCount(totalRecords: number, pageSize: number): number {
  if (pageSize < 1) throw new Error("page size must be >= 1");
  return Math.ceil(totalRecords / pageSize);
}

export class DataViewer {
  private cache = new Map<number, AnswerRecordRow[]>();
  questionFilter: string | null = null;

  constructor(
    private api: ApiClient,
    public runId: string,
    public totalRecords: number,
    public pageSize = 50,
  ) {}

  get pages(): number {
    return pageCount(this.totalRecords, this.pageSize);
  }

  async page(index: number): Promise<AnswerRecordRow[]> {
    if (index < 0 || (this.pages > 0 && index >= this.pages)) {
      throw new RangeError(`page ${index} out of 0..${this.pages - 1}`);
    }
    let rows = this.cache.get(index);
    if (rows === undefined) {
      rows = await this.api.fetchResultsPage(
        this.runId,
        index * this.pageSize,
        this.pageSize,
      );
      this.cache.set(index, rows);
    }
    return this.questionFilter === null
      ? rows
      : rows.filter((row) => row.question_id === this.questionFilter);
  }

  fetchedPages(): number {
    return this.cache.size;
  }

  setQuestionFilter(questionId: string | null): void {
    this.questionFilter = questionId;
  }
}

export function filterByQuestion(
  rows: AnswerRecordRow[],
  questionId: string,
): AnswerRecordRow[] {
  return rows.filter((row) => row.question_id === questionId);
}

// What the viewer should show for a run: its records, or (for a run that
// failed before persisting anything) the manifest's uncompleted list.
export function viewerSource(detail: {
  answers_persisted?: number;
  manifest?: { uncompleted: unknown[] };
}): "records" | "uncompleted" {
  const persisted = detail.answers_persisted ?? 0;
  if (persisted === 0 && detail.manifest && detail.manifest.uncompleted.length > 0) {
    return "uncompleted";
  }
  return "records";
}
