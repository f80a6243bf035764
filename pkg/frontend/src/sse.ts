// Metrics stream subscription with automatic resubscribe.
//
// The server closes the stream after the terminal snapshot; a drop before
// that resubscribes with exponential backoff and surfaces a staleness flag
// the monitor view renders while disconnected.

import type { MetricsSnapshot } from "./types.js";

export interface EventSourceLike {
  onmessage: ((event: MessageEvent) => void) | null;
  onerror: ((event: Event) => void) | null;
  onopen: ((event: Event) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface MetricsStreamOptions {
  eventSourceFactory?: EventSourceFactory;
  baseDelayMs?: number;
  maxDelayMs?: number;
  setTimeoutImpl?: (fn: () => void, ms: number) => unknown;
}

export class MetricsStream {
  private source: EventSourceLike | null = null;
  private attempts = 0;
  private closed = false;
  stale = false;

  constructor(
    private url: string,
    private onSnapshot: (snapshot: MetricsSnapshot) => void,
    private onStaleChange: (stale: boolean) => void = () => {},
    private options: MetricsStreamOptions = {},
  ) {}

  connect(): void {
    if (this.closed) return;
    const factory =
      this.options.eventSourceFactory ??
      ((url: string) => new EventSource(url) as unknown as EventSourceLike);
    const source = factory(this.url);
    this.source = source;
    source.onopen = () => {
      this.attempts = 0;
      this.setStale(false);
    };
    source.onmessage = (event) => {
      this.setStale(false);
      try {
        this.onSnapshot(JSON.parse(event.data) as MetricsSnapshot);
      } catch {
        // malformed frame: skip it, the next snapshot supersedes anyway
      }
    };
    source.onerror = () => {
      source.close();
      if (this.closed) return;
      this.setStale(true);
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const base = this.options.baseDelayMs ?? 500;
    const max = this.options.maxDelayMs ?? 15000;
    const delay = Math.min(max, base * 2 ** this.attempts);
    this.attempts += 1;
    const timer = this.options.setTimeoutImpl ?? setTimeout;
    timer(() => this.connect(), delay);
  }

  private setStale(stale: boolean): void {
    if (this.stale !== stale) {
      this.stale = stale;
      this.onStaleChange(stale);
    }
  }

  close(): void {
    this.closed = true;
    this.source?.close();
  }
}
