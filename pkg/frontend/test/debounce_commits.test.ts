import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { MaskCommitQueue } from "../src/commits.js";
import { Debounced } from "../src/debounce.js";
import { MaskModel } from "../src/mask.js";
import type { EditReceipt, MaskPayload } from "../src/types.js";

beforeEach(() => vi.useFakeTimers());
afterEach(() => vi.useRealTimers());

describe("Debounced", () => {
  it("fires once after the idle delay with the newest value", () => {
    const got: number[] = [];
    const d = new Debounced<number>((v) => got.push(v), 300);
    d.schedule(1);
    vi.advanceTimersByTime(200);
    d.schedule(2);
    vi.advanceTimersByTime(200);
    expect(got).toEqual([]); // still within the trailing window
    vi.advanceTimersByTime(150);
    expect(got).toEqual([2]);
  });

  it("flush runs the pending action immediately", () => {
    const got: number[] = [];
    const d = new Debounced<number>((v) => got.push(v), 300);
    d.schedule(7);
    d.flush();
    expect(got).toEqual([7]);
    d.flush(); // nothing pending: no-op
    expect(got).toEqual([7]);
  });

  it("cancel drops the pending value", () => {
    const got: number[] = [];
    const d = new Debounced<number>((v) => got.push(v), 300);
    d.schedule(7);
    d.cancel();
    vi.advanceTimersByTime(1000);
    expect(got).toEqual([]);
  });
});

const receiptFor = (index: number): EditReceipt => ({
  index,
  unchanged: false,
  content_hash: `h${index}`,
  preview_b64: "",
});

describe("MaskCommitQueue", () => {
  it("debounces strokes into one commit of the final mask", async () => {
    const commits: MaskPayload[] = [];
    const queue = new MaskCommitQueue(async (m) => {
      commits.push(m);
      return receiptFor(commits.length - 1);
    });
    const mask = new MaskModel(4, 4);
    mask.fill(1);
    queue.maskChanged(mask);
    mask.fill(2);
    queue.maskChanged(mask);
    await vi.advanceTimersByTimeAsync(350);
    expect(commits).toHaveLength(1);
    expect(atob(commits[0].b64).charCodeAt(0)).toBe(2);
  });

  it("buffers offline commits and retries with backoff", async () => {
    let failures = 2;
    const commits: MaskPayload[] = [];
    const offline: number[] = [];
    const queue = new MaskCommitQueue(
      async (m) => {
        if (failures > 0) {
          failures -= 1;
          throw new Error("offline");
        }
        commits.push(m);
        return receiptFor(0);
      },
      { onOffline: (attempt) => offline.push(attempt) },
      300,
      500,
    );
    const mask = new MaskModel(2, 2);
    mask.fill(5);
    queue.maskChanged(mask);
    await vi.advanceTimersByTimeAsync(300); // first attempt fails
    expect(offline).toEqual([1]);
    expect(queue.pendingRetry).toBe(true);
    await vi.advanceTimersByTimeAsync(500); // retry #1 fails (backoff 500ms)
    expect(offline).toEqual([1, 2]);
    await vi.advanceTimersByTimeAsync(1000); // retry #2 succeeds (backoff 1000ms)
    expect(commits).toHaveLength(1);
    expect(queue.pendingRetry).toBe(false);
  });

  it("reconciles via the receipt callback", async () => {
    const receipts: EditReceipt[] = [];
    const queue = new MaskCommitQueue(async () => receiptFor(3), {
      onReceipt: (r) => receipts.push(r),
    });
    const mask = new MaskModel(2, 2);
    queue.maskChanged(mask);
    queue.flush();
    await vi.runAllTimersAsync();
    expect(receipts.map((r) => r.index)).toEqual([3]);
    expect(queue.lastReceipt?.content_hash).toBe("h3");
  });
});
