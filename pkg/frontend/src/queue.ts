/** At-least-once label delivery with backoff.
 *
 * A label is acknowledged (onAck) only after the server confirms it; on
 * network failure it stays queued and is re-sent with exponential backoff.
 * The server dedups by pair_id, so retries are safe.
 */

import { Winner } from "./types.js";

export interface QueuedLabel {
  pairId: string;
  winner: Winner;
  criteria?: string;
}

export type SendFn = (label: QueuedLabel) => Promise<number>; // resolves to server label count

export class LabelQueue {
  private pending: QueuedLabel[] = [];
  private flushing = false;
  private backoffMs = 500;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private send: SendFn,
    private onAck: (label: QueuedLabel, serverCount: number) => void,
    private onError: (err: unknown) => void = () => {},
    private maxBackoffMs = 8000
  ) {}

  get size(): number {
    return this.pending.length;
  }

  push(label: QueuedLabel): void {
    this.pending.push(label);
    void this.flush();
  }

  async flush(): Promise<void> {
    if (this.flushing) return;
    this.flushing = true;
    try {
      while (this.pending.length > 0) {
        const label = this.pending[0];
        try {
          const count = await this.send(label);
          this.pending.shift();
          this.backoffMs = 500;
          this.onAck(label, count);
        } catch (err) {
          this.onError(err);
          this.scheduleRetry();
          return;
        }
      }
    } finally {
      this.flushing = false;
    }
  }

  private scheduleRetry(): void {
    if (this.timer) clearTimeout(this.timer);
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    this.flushing = false;
    this.timer = setTimeout(() => void this.flush(), delay);
  }
}
