/** Wire protocol: state encoding (JSON text out) and frame decoding
 * (binary in). Mirrors the render service schema exactly. */

import { lookAtCameraToWorld, normalize, sphericalPoint, sub } from "./math.js";
import type { ViewerState } from "./state.js";

export const FRAME_MAGIC = 0x47533346; // "GS3F" big-endian read of the 4 bytes

export interface StateMessage {
  type: "state";
  camera: {
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
    mode: "perspective";
    camera_to_world: number[][];
  };
  light: Record<string, unknown>;
  toggles: { phi: boolean; psi: boolean; shadow: boolean };
  quality: { width: number; height: number; format?: "rgb8" | "f32" };
  exposure: number;
}

export function buildStateMessage(s: ViewerState): StateMessage {
  const { width, height } = s.resolution;
  const fx = (0.5 * width) / Math.tan((s.fovDeg * Math.PI) / 360);
  const eye = sphericalPoint(s.target, s.orbit.azimuthDeg, s.orbit.elevationDeg, s.orbit.radius);
  const lightPos = sphericalPoint(s.target, s.light.azimuthDeg, s.light.elevationDeg, s.light.radius);

  let light: Record<string, unknown>;
  if (s.light.mode === "point") {
    light = {
      kind: "point",
      position: lightPos,
      intensity: [s.light.intensity, s.light.intensity, s.light.intensity],
      falloff: "inverse_square",
    };
  } else if (s.light.mode === "directional") {
    light = {
      kind: "directional",
      direction: normalize(sub(s.target, lightPos)),
      intensity: [s.light.intensity, s.light.intensity, s.light.intensity],
    };
  } else {
    light = { kind: "env", map: s.light.envMap, samples: s.light.envSamples };
  }

  return {
    type: "state",
    camera: {
      fx,
      fy: fx,
      cx: width / 2,
      cy: height / 2,
      width,
      height,
      mode: "perspective",
      camera_to_world: lookAtCameraToWorld(eye, s.target),
    },
    light,
    toggles: { ...s.toggles },
    quality: { width, height },
    exposure: s.exposure,
  };
}

export function encodeState(s: ViewerState): string {
  return JSON.stringify(buildStateMessage(s));
}

export interface DecodedFrame {
  seq: number;
  width: number;
  height: number;
  pixels: Uint8Array; // RGB8 rows
}

/** Decode one binary frame; null when the magic or length is wrong. */
export function decodeFrame(buffer: ArrayBuffer): DecodedFrame | null {
  if (buffer.byteLength < 16) return null;
  const view = new DataView(buffer);
  if (view.getUint32(0, false) !== FRAME_MAGIC) return null;
  const seq = view.getUint32(4, true);
  const width = view.getUint32(8, true);
  const height = view.getUint32(12, true);
  const expected = width * height * 3;
  if (buffer.byteLength - 16 !== expected) return null;
  return { seq, width, height, pixels: new Uint8Array(buffer, 16) };
}
