/** Trailing debounce with an explicit flush, used for mask commit batching. */
export class Debounced<T> {
  private handle: ReturnType<typeof setTimeout> | null = null;
  private pending: T | undefined;

  constructor(
    private readonly action: (value: T) => void,
    readonly delayMs = 300,
  ) {}

  schedule(value: T): void {
    this.pending = value;
    if (this.handle !== null) clearTimeout(this.handle);
    this.handle = setTimeout(() => this.fire(), this.delayMs);
  }

  /** Run the pending action immediately (pointer-up, page hide). */
  flush(): void {
    if (this.handle !== null) {
      clearTimeout(this.handle);
      this.fire();
    }
  }

  cancel(): void {
    if (this.handle !== null) clearTimeout(this.handle);
    this.handle = null;
    this.pending = undefined;
  }

  get armed(): boolean {
    return this.handle !== null;
  }

  private fire(): void {
    this.handle = null;
    if (this.pending !== undefined) {
      const value = this.pending;
      this.pending = undefined;
      this.action(value);
    }
  }
}
