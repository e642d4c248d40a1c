/** Rolling frames-per-second over the most recent arrivals. */

export class FpsCounter {
  private stamps: number[] = [];

  constructor(private readonly window = 30) {}

  tick(nowMs: number): void {
    this.stamps.push(nowMs);
    if (this.stamps.length > this.window) this.stamps.shift();
  }

  /** 0 until at least two frames have arrived. */
  fps(): number {
    if (this.stamps.length < 2) return 0;
    const span = this.stamps[this.stamps.length - 1] - this.stamps[0];
    if (span <= 0) return 0;
    return ((this.stamps.length - 1) * 1000) / span;
  }

  reset(): void {
    this.stamps.length = 0;
  }
}
