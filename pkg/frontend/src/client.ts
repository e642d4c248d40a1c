/** WebSocket client: streams state out (throttled upstream), frames in,
 * reconnects with bounded exponential backoff. The socket constructor is
 * injectable so tests can drive a fake. */

import { FpsCounter } from "./fps.js";
import { DecodedFrame, decodeFrame } from "./protocol.js";
import { reconnectDelayMs } from "./throttle.js";

export interface SocketLike {
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export interface ClientEvents {
  onFrame?: (frame: DecodedFrame, fps: number) => void;
  onControl?: (msg: Record<string, unknown>) => void;
  onBadFrame?: (count: number) => void;
  onStatus?: (status: "connecting" | "open" | "closed") => void;
}

export class ViewerClient {
  badFrames = 0;
  private socket: SocketLike | null = null;
  private attempts = 0;
  private closed = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private readonly fpsCounter = new FpsCounter();

  constructor(
    private readonly url: string,
    private readonly events: ClientEvents = {},
    private readonly makeSocket: (url: string) => SocketLike =
      (u) => new WebSocket(u) as unknown as SocketLike,
    private readonly now: () => number = () => performance.now(),
  ) {}

  connect(): void {
    this.closed = false;
    this.events.onStatus?.("connecting");
    const ws = this.makeSocket(this.url);
    this.socket = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.attempts = 0;
      this.fpsCounter.reset();
      this.events.onStatus?.("open");
    };
    ws.onmessage = (ev) => this.handleMessage(ev.data);
    ws.onclose = () => {
      this.socket = null;
      this.events.onStatus?.("closed");
      if (!this.closed) this.scheduleReconnect();
    };
  }

  /** Delay of the NEXT reconnect attempt (exposed for tests/UI). */
  nextDelayMs(): number {
    return reconnectDelayMs(this.attempts);
  }

  private scheduleReconnect(): void {
    const delay = reconnectDelayMs(this.attempts);
    this.attempts += 1;
    this.timer = setTimeout(() => this.connect(), delay);
  }

  private handleMessage(data: unknown): void {
    if (typeof data === "string") {
      try {
        this.events.onControl?.(JSON.parse(data));
      } catch {
        /* ignore unparseable control text */
      }
      return;
    }
    const frame = decodeFrame(data as ArrayBuffer);
    if (frame === null) {
      this.badFrames += 1;
      this.events.onBadFrame?.(this.badFrames);
      return; // dropped; connection stays up
    }
    this.fpsCounter.tick(this.now());
    this.events.onFrame?.(frame, this.fpsCounter.fps());
  }

  send(text: string): boolean {
    if (!this.socket) return false;
    this.socket.send(text);
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.timer) clearTimeout(this.timer);
    this.socket?.close();
  }
}
