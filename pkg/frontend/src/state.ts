/** Viewer state: what the human steers, before protocol encoding. */

import type { Vec3 } from "./math.js";

export type LightMode = "point" | "directional" | "env";

export interface ViewerState {
  orbit: { azimuthDeg: number; elevationDeg: number; radius: number };
  target: Vec3;
  light: {
    mode: LightMode;
    azimuthDeg: number;
    elevationDeg: number;
    radius: number;
    intensity: number;
    envMap: string;
    envSamples: number;
  };
  toggles: { phi: boolean; psi: boolean; shadow: boolean };
  resolution: { width: number; height: number };
  fovDeg: number;
  exposure: number;
}

export const RESOLUTION_PRESETS: ReadonlyArray<[number, number]> = [
  [128, 128],
  [256, 256],
  [384, 384],
  [512, 512],
];

export function defaultState(): ViewerState {
  return {
    orbit: { azimuthDeg: 30, elevationDeg: 20, radius: 2.5 },
    target: [0, 0, 0],
    light: {
      mode: "point",
      azimuthDeg: -45,
      elevationDeg: 45,
      radius: 2.0,
      intensity: 6.0,
      envMap: "white",
      envSamples: 32,
    },
    toggles: { phi: true, psi: true, shadow: true },
    resolution: { width: 256, height: 256 },
    fovDeg: 50,
    exposure: 1.0,
  };
}

const ELEVATION_LIMIT = 89.9;

/** Enforce the state invariants in place (clamping, not throwing). */
export function clampState(s: ViewerState): ViewerState {
  s.orbit.elevationDeg = Math.max(-ELEVATION_LIMIT, Math.min(ELEVATION_LIMIT, s.orbit.elevationDeg));
  s.light.elevationDeg = Math.max(-ELEVATION_LIMIT, Math.min(ELEVATION_LIMIT, s.light.elevationDeg));
  s.orbit.radius = Math.max(0.05, s.orbit.radius);
  s.light.radius = Math.max(0.05, s.light.radius);
  s.light.intensity = Math.max(0, s.light.intensity);
  s.exposure = Math.max(0, s.exposure);
  return s;
}
