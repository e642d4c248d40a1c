/** Small vector helpers shared by the orbit camera and the light gizmo. */

export type Vec3 = [number, number, number];

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-12) throw new Error("cannot normalize a zero vector");
  return scale(a, 1 / n);
}

/** Point on the sphere around `target`: azimuth about +y, elevation toward +y. */
export function sphericalPoint(
  target: Vec3, azimuthDeg: number, elevationDeg: number, radius: number,
): Vec3 {
  const az = (azimuthDeg * Math.PI) / 180;
  const el = (elevationDeg * Math.PI) / 180;
  const dir: Vec3 = [
    Math.sin(az) * Math.cos(el),
    Math.sin(el),
    Math.cos(az) * Math.cos(el),
  ];
  return add(target, scale(dir, radius));
}

/**
 * camera_to_world for a camera at `eye` looking at `target`, y-up world.
 * View axes follow the render service convention: x right, y down, z forward.
 */
export function lookAtCameraToWorld(eye: Vec3, target: Vec3, up: Vec3 = [0, 1, 0]): number[][] {
  const f = normalize(sub(target, eye));
  let r = cross(f, up);
  if (norm(r) < 1e-8) r = cross(f, [1, 0, 0]);
  r = normalize(r);
  const d = cross(f, r);
  return [
    [r[0], d[0], f[0], eye[0]],
    [r[1], d[1], f[1], eye[1]],
    [r[2], d[2], f[2], eye[2]],
    [0, 0, 0, 1],
  ];
}
