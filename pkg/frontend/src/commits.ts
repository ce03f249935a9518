import { Debounced } from "./debounce.js";
import { encodeMask, MaskModel } from "./mask.js";
import type { EditReceipt, MaskPayload } from "./types.js";

export interface CommitCallbacks {
  /** Server accepted the commit: reconcile the optimistic overlay. */
  onReceipt?: (receipt: EditReceipt) => void;
  onOffline?: (attempt: number) => void;
}

type CommitFn = (mask: MaskPayload) => Promise<EditReceipt>;

/**
 * Debounced, offline-tolerant mask commit queue.
 *
 * Strokes update the local mask immediately (optimistic preview); commits fire
 * after the configured idle delay. A failed commit is buffered and retried
 * with exponential backoff; newer strokes simply replace the buffered mask.
 */
export class MaskCommitQueue {
  private readonly debounced: Debounced<MaskModel>;
  private buffered: MaskModel | null = null;
  private retryHandle: ReturnType<typeof setTimeout> | null = null;
  private attempt = 0;
  private inFlight = false;
  lastReceipt: EditReceipt | null = null;

  constructor(
    private readonly commit: CommitFn,
    private readonly callbacks: CommitCallbacks = {},
    idleMs = 300,
    private readonly baseBackoffMs = 500,
    private readonly maxBackoffMs = 10_000,
  ) {
    this.debounced = new Debounced<MaskModel>((mask) => void this.send(mask), idleMs);
  }

  /** Called after each stroke; commit fires once the brush stays idle. */
  maskChanged(mask: MaskModel): void {
    this.debounced.schedule(mask.clone());
  }

  /** Commit now (pointer released, tab hidden). */
  flush(): void {
    this.debounced.flush();
  }

  get pendingRetry(): boolean {
    return this.retryHandle !== null;
  }

  private async send(mask: MaskModel): Promise<void> {
    if (this.inFlight) {
      this.buffered = mask; // collapse onto the newest state
      return;
    }
    this.inFlight = true;
    try {
      const receipt = await this.commit(encodeMask(mask));
      this.lastReceipt = receipt;
      this.attempt = 0;
      this.callbacks.onReceipt?.(receipt);
    } catch {
      this.buffered = mask;
      this.attempt += 1;
      this.callbacks.onOffline?.(this.attempt);
      const delay = Math.min(this.baseBackoffMs * 2 ** (this.attempt - 1), this.maxBackoffMs);
      this.retryHandle = setTimeout(() => {
        this.retryHandle = null;
        const pending = this.buffered;
        this.buffered = null;
        if (pending) void this.send(pending);
      }, delay);
    } finally {
      this.inFlight = false;
      if (this.buffered && this.retryHandle === null) {
        const pending = this.buffered;
        this.buffered = null;
        void this.send(pending);
      }
    }
  }
}
