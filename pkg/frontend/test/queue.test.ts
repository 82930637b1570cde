import { describe, expect, it, vi } from "vitest";

import { LabelQueue, QueuedLabel } from "../src/queue.js";

const label = (i: number): QueuedLabel => ({ pairId: `p-${i}`, winner: "a" });

describe("label queue", () => {
  it("acknowledges only after the server confirms", async () => {
    let resolveSend: (n: number) => void = () => {};
    const send = vi.fn(
      () =>
        new Promise<number>((resolve) => {
          resolveSend = resolve;
        })
    );
    const acked: string[] = [];
    const q = new LabelQueue(send, (l) => acked.push(l.pairId));
    q.push(label(1));
    expect(acked).toEqual([]); // in flight, not acknowledged
    resolveSend(1);
    await vi.waitFor(() => expect(acked).toEqual(["p-1"]));
  });

  it("keeps failed labels queued and flushes them later", async () => {
    vi.useFakeTimers();
    let failing = true;
    const sent: string[] = [];
    const send = async (l: QueuedLabel) => {
      if (failing) throw new Error("offline");
      sent.push(l.pairId);
      return sent.length;
    };
    const acked: string[] = [];
    const q = new LabelQueue(send, (l) => acked.push(l.pairId));
    q.push(label(1));
    q.push(label(2));
    await vi.advanceTimersByTimeAsync(10);
    expect(q.size).toBe(2);
    expect(acked).toEqual([]);
    failing = false;
    await vi.advanceTimersByTimeAsync(5000); // backoff timers fire
    expect(acked).toEqual(["p-1", "p-2"]);
    expect(q.size).toBe(0);
    vi.useRealTimers();
  });

  it("delivers in order (at-least-once)", async () => {
    const sent: string[] = [];
    const q = new LabelQueue(
      async (l) => {
        sent.push(l.pairId);
        return sent.length;
      },
      () => {}
    );
    q.push(label(1));
    q.push(label(2));
    q.push(label(3));
    await vi.waitFor(() => expect(sent).toEqual(["p-1", "p-2", "p-3"]));
  });
});
