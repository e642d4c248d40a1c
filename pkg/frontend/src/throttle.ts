/** Latest-value throttle: however often the pointer moves, at most one
 * state message leaves per animation tick (mirrors the server's coalescing). */

export class TickThrottle<T> {
  private pending: T | null = null;

  set(value: T): void {
    this.pending = value;
  }

  /** Called once per tick; returns the latest pending value at most once. */
  drain(): T | null {
    const out = this.pending;
    this.pending = null;
    return out;
  }
}

/** Reconnect delay: exponential backoff from `baseMs`, capped at `capMs`. */
export function reconnectDelayMs(attempt: number, baseMs = 250, capMs = 10_000): number {
  if (attempt <= 0) return baseMs;
  return Math.min(baseMs * 2 ** attempt, capMs);
}
