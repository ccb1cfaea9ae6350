import { describe, expect, it } from "vitest";

import { minimapSegments, planeCorners, volumeCenter, volumeCorners } from "../src/minimap.js";
import { quatFromAxisAngle, quatIdentity } from "../src/probe.js";
import type { HelloAck } from "../src/protocol.js";

const info: HelloAck = {
  type: "hello_ack",
  version: 1,
  volumeKind: 0,
  origin: [-1, -1, -1],
  voxelSize: 0.25,
  dims: [80, 40, 120],
  sampleCount: 1000,
};

describe("minimap geometry", () => {
  it("volume box has 8 corners and a centered centroid", () => {
    const corners = volumeCorners(info);
    expect(corners).toHaveLength(8);
    const center = volumeCenter(info);
    const mean = [0, 1, 2].map((a) => corners.reduce((s, c) => s + c[a], 0) / 8);
    expect(mean[0]).toBeCloseTo(center[0], 9);
    expect(mean[1]).toBeCloseTo(center[1], 9);
    expect(mean[2]).toBeCloseTo(center[2], 9);
  });

  it("plane corners span the pixel extent", () => {
    const corners = planeCorners([0, 0, 0], quatIdentity(), 64, 32, [0.25, 0.5]);
    expect(corners[0]).toEqual([0, 0, 0]);
    expect(corners[1][0]).toBeCloseTo(63 * 0.25, 9);
    expect(corners[2][1]).toBeCloseTo(31 * 0.5, 9);
    expect(corners.every((c) => c[2] === 0)).toBe(true);
  });

  it("rotated plane corners move out of the z=0 plane", () => {
    const q = quatFromAxisAngle([1, 0, 0], Math.PI / 4);
    const corners = planeCorners([0, 0, 0], q, 16, 16, [0.5, 0.5]);
    expect(Math.abs(corners[2][2])).toBeGreaterThan(0.1);
  });

  it("produces 12 box edges + 4 plane edges + 1 beam segment, all finite", () => {
    const segments = minimapSegments(
      info, [2, 2, 2], quatIdentity(), 32, 32, [0.25, 0.25],
      { yaw: 0.5, pitch: 0.4, scale: 4, centerPx: [130, 130] },
    );
    expect(segments).toHaveLength(17);
    expect(segments.filter((s) => s.kind === "box")).toHaveLength(12);
    expect(segments.filter((s) => s.kind === "plane")).toHaveLength(4);
    expect(segments.filter((s) => s.kind === "beam")).toHaveLength(1);
    for (const s of segments) {
      expect(Number.isFinite(s.x0 + s.y0 + s.x1 + s.y1)).toBe(true);
    }
  });
});
