/**
 * Tiny 3D mini-map: the volume's bounding box, the current reslice plane
 * rectangle and its beam direction, projected to 2D line segments with a
 * fixed-angle orthographic view. Pure geometry, drawn by the app layer.
 */

import { quatRotate, type Quat, type Vec3 } from "./probe.js";
import type { HelloAck } from "./protocol.js";

export interface Segment {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  kind: "box" | "plane" | "beam";
}

const BOX_EDGES: Array<[number, number]> = [
  [0, 1], [1, 3], [3, 2], [2, 0],
  [4, 5], [5, 7], [7, 6], [6, 4],
  [0, 4], [1, 5], [2, 6], [3, 7],
];

function project(p: Vec3, yaw: number, pitch: number): [number, number] {
  const cy = Math.cos(yaw);
  const sy = Math.sin(yaw);
  const cp = Math.cos(pitch);
  const sp = Math.sin(pitch);
  const x = p[0] * cy + p[2] * sy;
  const z = -p[0] * sy + p[2] * cy;
  const y = p[1] * cp - z * sp;
  return [x, y];
}

export interface MinimapView {
  yaw: number;
  pitch: number;
  scale: number;
  centerPx: [number, number];
}

export function volumeCorners(info: HelloAck): Vec3[] {
  const [ox, oy, oz] = info.origin;
  const [nx, ny, nz] = info.dims;
  const ex = ox + nx * info.voxelSize;
  const ey = oy + ny * info.voxelSize;
  const ez = oz + nz * info.voxelSize;
  const corners: Vec3[] = [];
  for (const z of [oz, ez]) {
    for (const y of [oy, ey]) {
      for (const x of [ox, ex]) {
        corners.push([x, y, z]);
      }
    }
  }
  return corners;
}

export function volumeCenter(info: HelloAck): Vec3 {
  const [ox, oy, oz] = info.origin;
  const [nx, ny, nz] = info.dims;
  return [
    ox + 0.5 * nx * info.voxelSize,
    oy + 0.5 * ny * info.voxelSize,
    oz + 0.5 * nz * info.voxelSize,
  ];
}

export function planeCorners(
  position: Vec3,
  rotation: Quat,
  width: number,
  height: number,
  pitch: [number, number],
): Vec3[] {
  const umax = (width - 1) * pitch[0];
  const vmax = (height - 1) * pitch[1];
  const local: Vec3[] = [
    [0, 0, 0],
    [umax, 0, 0],
    [umax, vmax, 0],
    [0, vmax, 0],
  ];
  return local.map((p) => {
    const r = quatRotate(rotation, p);
    return [r[0] + position[0], r[1] + position[1], r[2] + position[2]] as Vec3;
  });
}

export function minimapSegments(
  info: HelloAck,
  probePosition: Vec3,
  probeRotation: Quat,
  planeWidth: number,
  planeHeight: number,
  planePitch: [number, number],
  view: MinimapView,
): Segment[] {
  const center = volumeCenter(info);
  const toScreen = (p: Vec3): [number, number] => {
    const rel: Vec3 = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    const [x, y] = project(rel, view.yaw, view.pitch);
    return [view.centerPx[0] + x * view.scale, view.centerPx[1] + y * view.scale];
  };
  const segments: Segment[] = [];
  const box = volumeCorners(info).map(toScreen);
  for (const [a, b] of BOX_EDGES) {
    segments.push({ x0: box[a][0], y0: box[a][1], x1: box[b][0], y1: box[b][1], kind: "box" });
  }
  const plane = planeCorners(probePosition, probeRotation, planeWidth, planeHeight, planePitch)
    .map(toScreen);
  for (let i = 0; i < 4; i++) {
    const j = (i + 1) % 4;
    segments.push({
      x0: plane[i][0], y0: plane[i][1], x1: plane[j][0], y1: plane[j][1], kind: "plane",
    });
  }
  // beam arrow: depth axis from the plane center
  const depth = quatRotate(probeRotation, [0, 1, 0]);
  const mid = planeCornersMid(probePosition, probeRotation, planeWidth, planeHeight, planePitch);
  const arrowLen = 0.25 * Math.min(planeWidth * planePitch[0], planeHeight * planePitch[1]);
  const tip: Vec3 = [mid[0] + depth[0] * arrowLen, mid[1] + depth[1] * arrowLen, mid[2] + depth[2] * arrowLen];
  const a = toScreen(mid);
  const b = toScreen(tip);
  segments.push({ x0: a[0], y0: a[1], x1: b[0], y1: b[1], kind: "beam" });
  return segments;
}

function planeCornersMid(
  position: Vec3,
  rotation: Quat,
  width: number,
  height: number,
  pitch: [number, number],
): Vec3 {
  const corners = planeCorners(position, rotation, width, height, pitch);
  return [
    (corners[0][0] + corners[2][0]) / 2,
    (corners[0][1] + corners[2][1]) / 2,
    (corners[0][2] + corners[2][2]) / 2,
  ];
}
