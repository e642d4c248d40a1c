import { describe, expect, it } from "vitest";

import { FpsCounter } from "../src/fps.js";
import { TickThrottle, reconnectDelayMs } from "../src/throttle.js";

describe("FpsCounter", () => {
  it("reads about 30 fps for 30 frames 33 ms apart", () => {
    const fps = new FpsCounter();
    for (let i = 0; i < 30; i++) fps.tick(i * 33);
    expect(Math.abs(fps.fps() - 30) / 30).toBeLessThan(0.05);
  });

  it("rolls over the window", () => {
    const fps = new FpsCounter(30);
    for (let i = 0; i < 60; i++) fps.tick(i < 30 ? i * 100 : 3000 + (i - 30) * 10);
    // only the latest 30 stamps count: ~100 fps
    expect(fps.fps()).toBeGreaterThan(80);
  });

  it("is zero before two frames", () => {
    const fps = new FpsCounter();
    expect(fps.fps()).toBe(0);
    fps.tick(0);
    expect(fps.fps()).toBe(0);
  });
});

describe("TickThrottle", () => {
  it("emits at most one latest value per tick", () => {
    const t = new TickThrottle<number>();
    const sent: number[] = [];
    // a burst of drag events within one tick
    for (let i = 0; i < 25; i++) t.set(i);
    let v = t.drain();
    if (v !== null) sent.push(v);
    // an idle tick emits nothing
    v = t.drain();
    if (v !== null) sent.push(v);
    t.set(42);
    v = t.drain();
    if (v !== null) sent.push(v);
    expect(sent).toEqual([24, 42]);
  });
});

describe("reconnectDelayMs", () => {
  it("grows exponentially and caps at ten seconds", () => {
    const delays = Array.from({ length: 12 }, (_, i) => reconnectDelayMs(i));
    for (let i = 1; i < delays.length; i++) {
      expect(delays[i]).toBeGreaterThanOrEqual(delays[i - 1]);
      expect(delays[i]).toBeLessThanOrEqual(10_000);
    }
    expect(delays[0]).toBe(250);
    expect(delays[delays.length - 1]).toBe(10_000);
  });
});
