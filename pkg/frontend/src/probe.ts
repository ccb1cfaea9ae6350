/**
 * Virtual probe state: a rigid pose plus the step sizes and reslice-config
 * slider values the UI manipulates. The quaternion is renormalized after
 * every increment so arbitrarily long interaction never drifts off the unit
 * sphere.
 */

import type { ConfigOverrides, PoseTuple } from "./protocol.js";

/** scalar-first [w, x, y, z] */
export type Quat = [number, number, number, number];
export type Vec3 = [number, number, number];

export function quatIdentity(): Quat {
  return [1, 0, 0, 0];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [w1, x1, y1, z1] = a;
  const [w2, x2, y2, z2] = b;
  return [
    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleRad: number): Quat {
  const n = Math.hypot(...axis);
  const s = Math.sin(angleRad / 2) / n;
  return [Math.cos(angleRad / 2), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [, x, y, z] = q;
  const w = q[0];
  // v + 2 w (u x v) + 2 u x (u x v)
  const tx = 2 * (y * v[2] - z * v[1]);
  const ty = 2 * (z * v[0] - x * v[2]);
  const tz = 2 * (x * v[1] - y * v[0]);
  return [
    v[0] + w * tx + y * tz - z * ty,
    v[1] + w * ty + z * tx - x * tz,
    v[2] + w * tz + x * ty - y * tx,
  ];
}

export function quatAngleBetween(a: Quat, b: Quat): number {
  const dot = Math.abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]);
  return 2 * Math.acos(Math.min(1, dot));
}

export type LocalAxis = "x" | "y" | "normal";

const LOCAL_AXES: Record<LocalAxis, Vec3> = {
  x: [1, 0, 0],
  y: [0, 1, 0],
  normal: [0, 0, 1],
};

export interface ProbeConfig extends ConfigOverrides {}

export const DEFAULT_CONFIG: ProbeConfig = {
  interpRadius: 0.125,
  normalThresholdDeg: 25,
  inplaneThresholdDeg: 15,
  kNormal: 10,
  kInplane: 5,
  kDist: 2,
};

export class ProbeState {
  position: Vec3;
  rotation: Quat;
  translateStepMm = 0.5;
  rotateStepDeg = 2.0;
  config: ProbeConfig;

  constructor(position: Vec3 = [0, 0, 0], rotation: Quat = quatIdentity()) {
    this.position = [...position];
    this.rotation = quatNormalize([...rotation] as Quat);
    this.config = { ...DEFAULT_CONFIG };
  }

  /** Translate along one of the plane's own axes (world displacement). */
  translate(axis: LocalAxis, mm: number): void {
    const dir = quatRotate(this.rotation, LOCAL_AXES[axis]);
    this.position = [
      this.position[0] + dir[0] * mm,
      this.position[1] + dir[1] * mm,
      this.position[2] + dir[2] * mm,
    ];
  }

  /** Rotate about one of the plane's own axes; renormalizes every call. */
  rotate(axis: LocalAxis, deg: number): void {
    const local = quatFromAxisAngle(LOCAL_AXES[axis], (deg * Math.PI) / 180);
    this.rotation = quatNormalize(quatMultiply(this.rotation, local));
  }

  poseTuple(): PoseTuple {
    const [w, x, y, z] = this.rotation;
    return [this.position[0], this.position[1], this.position[2], w, x, y, z];
  }
}
