/** Fixed-capacity series buffer: once full, each push drops the oldest. */
export class Ring<T> {
  private buf: T[] = [];
  private start = 0;

  constructor(readonly capacity: number) {
    if (!Number.isInteger(capacity) || capacity < 1) {
      throw new RangeError(`ring capacity must be a positive integer: ${capacity}`);
    }
  }

  get length(): number {
    return this.buf.length;
  }

  push(item: T): void {
    if (this.buf.length < this.capacity) {
      this.buf.push(item);
    } else {
      this.buf[this.start] = item;
      this.start = (this.start + 1) % this.capacity;
    }
  }

  /** i-th oldest retained item (0 = oldest). */
  at(i: number): T {
    if (i < 0 || i >= this.buf.length) {
      throw new RangeError(`index ${i} out of range 0..${this.buf.length - 1}`);
    }
    return this.buf[(this.start + i) % this.capacity] as T;
  }

  last(): T | null {
    return this.buf.length === 0 ? null : this.at(this.buf.length - 1);
  }

  /** Oldest-to-newest copy. */
  toArray(): T[] {
    const out: T[] = [];
    for (let i = 0; i < this.buf.length; i++) out.push(this.at(i));
    return out;
  }

  clear(): void {
    this.buf = [];
    this.start = 0;
  }
}
