/** Browser UI: canvas display, orbit/light drag, toggles, FPS readout.
 * Camera drag = primary button; light drag = shift or the "move light"
 * checkbox. Configure the endpoint with ?host=...&port=... query params. */

import { ViewerClient } from "./client.js";
import { encodeState } from "./protocol.js";
import { RESOLUTION_PRESETS, ViewerState, clampState, defaultState } from "./state.js";
import { TickThrottle } from "./throttle.js";

export function startViewer(root: Document = document): void {
  const params = new URLSearchParams(root.defaultView?.location.search ?? "");
  const host = params.get("host") ?? "127.0.0.1";
  const port = params.get("port") ?? "8765";
  const url = `ws://${host}:${port}/ws`;

  const canvas = root.getElementById("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const statusEl = root.getElementById("status")!;
  const fpsEl = root.getElementById("fps")!;
  const badEl = root.getElementById("badframes")!;

  const state: ViewerState = defaultState();
  const throttle = new TickThrottle<string>();
  let lightDragToggle = false;

  const client = new ViewerClient(url, {
    onStatus: (s) => {
      statusEl.textContent = s === "open" ? `connected to ${url}`
        : s === "connecting" ? "connecting..."
        : `disconnected, retrying in ${(client.nextDelayMs() / 1000).toFixed(1)}s`;
    },
    onFrame: (frame, fps) => {
      if (canvas.width !== frame.width || canvas.height !== frame.height) {
        canvas.width = frame.width;
        canvas.height = frame.height;
      }
      const img = ctx.createImageData(frame.width, frame.height);
      const rgba = img.data;
      const rgb = frame.pixels;
      for (let i = 0, j = 0; i < rgb.length; i += 3, j += 4) {
        rgba[j] = rgb[i];
        rgba[j + 1] = rgb[i + 1];
        rgba[j + 2] = rgb[i + 2];
        rgba[j + 3] = 255;
      }
      ctx.putImageData(img, 0, 0);
      fpsEl.textContent = fps.toFixed(1);
    },
    onBadFrame: (count) => {
      badEl.textContent = String(count);
    },
  });

  function push(): void {
    clampState(state);
    throttle.set(encodeState(state));
  }

  // one outgoing state per animation tick, latest wins
  function tick(): void {
    const pending = throttle.drain();
    if (pending !== null) client.send(pending);
    root.defaultView?.requestAnimationFrame(tick);
  }

  // pointer: orbit camera, or drag the light on its sphere
  let dragging = false;
  let last: [number, number] = [0, 0];
  let draggingLight = false;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    draggingLight = ev.shiftKey || lightDragToggle;
    last = [ev.clientX, ev.clientY];
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - last[0];
    const dy = ev.clientY - last[1];
    last = [ev.clientX, ev.clientY];
    const orb = draggingLight ? state.light : state.orbit;
    orb.azimuthDeg -= dx * 0.5;
    orb.elevationDeg += dy * 0.5;
    push();
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state.orbit.radius *= Math.exp(ev.deltaY * 1e-3);
    push();
  });

  function bindSlider(id: string, apply: (v: number) => void): void {
    const el = root.getElementById(id) as HTMLInputElement;
    el.addEventListener("input", () => {
      apply(parseFloat(el.value));
      push();
    });
  }
  bindSlider("light-radius", (v) => (state.light.radius = v));
  bindSlider("light-intensity", (v) => (state.light.intensity = v));
  bindSlider("exposure", (v) => (state.exposure = v));

  function bindToggle(id: string, apply: (v: boolean) => void): void {
    const el = root.getElementById(id) as HTMLInputElement;
    el.addEventListener("change", () => {
      apply(el.checked);
      push();
    });
  }
  bindToggle("toggle-shadow", (v) => (state.toggles.shadow = v));
  bindToggle("toggle-phi", (v) => (state.toggles.phi = v));
  bindToggle("toggle-psi", (v) => (state.toggles.psi = v));
  bindToggle("drag-light", (v) => (lightDragToggle = v));

  const modeEl = root.getElementById("light-mode") as HTMLSelectElement;
  modeEl.addEventListener("change", () => {
    state.light.mode = modeEl.value as ViewerState["light"]["mode"];
    push();
  });

  const resEl = root.getElementById("resolution") as HTMLSelectElement;
  for (const [w, h] of RESOLUTION_PRESETS) {
    const opt = root.createElement("option");
    opt.value = `${w}x${h}`;
    opt.textContent = `${w} x ${h}`;
    if (w === state.resolution.width) opt.selected = true;
    resEl.appendChild(opt);
  }
  resEl.addEventListener("change", () => {
    const [w, h] = resEl.value.split("x").map(Number);
    state.resolution = { width: w, height: h };
    push();
  });

  client.connect();
  push();
  tick();
}
