/**
 * Response-to-pixels: grayscale reslice into an RGBA framebuffer with an
 * optional coverage tint for unassigned pixels. Kept DOM-free (works on any
 * ImageData-shaped object) so it is unit-testable outside a browser.
 */

import {
  ENCODING_RAW8,
  STATUS_OK,
  unpackCoverage,
  type OkResponse,
  type ResliceResponse,
} from "./protocol.js";

export interface FrameBufferLike {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA
}

export interface RenderOptions {
  coverageTint?: boolean;
}

export interface RenderResult {
  applied: boolean;
  latencyMs: number;
  coveredFraction?: number;
  warning?: string;
}

const TINT_R = 30;
const TINT_G = 60;
const TINT_B = 140;

export function renderResponse(
  resp: ResliceResponse,
  target: FrameBufferLike,
  options: RenderOptions = {},
): RenderResult {
  if (resp.status !== STATUS_OK) {
    // superseded/error responses update telemetry only, never the canvas
    return { applied: false, latencyMs: resp.latencyMs };
  }
  if (resp.width !== target.width || resp.height !== target.height) {
    return {
      applied: false,
      latencyMs: resp.latencyMs,
      warning: `frame ${resp.width}x${resp.height} does not fit target ` +
        `${target.width}x${target.height}; discarded`,
    };
  }
  if (resp.encoding !== ENCODING_RAW8) {
    return { applied: false, latencyMs: resp.latencyMs, warning: "unsupported image encoding" };
  }
  const expected = resp.width * resp.height;
  if (resp.image.byteLength !== expected) {
    return { applied: false, latencyMs: resp.latencyMs, warning: "image payload size mismatch" };
  }
  const coverage = unpackCoverage(resp.coverage, resp.width, resp.height);
  const tint = options.coverageTint ?? false;
  let covered = 0;
  for (let i = 0; i < expected; i++) {
    const g = resp.image[i];
    const o = i * 4;
    if (coverage[i]) {
      covered++;
      target.data[o] = g;
      target.data[o + 1] = g;
      target.data[o + 2] = g;
    } else if (tint) {
      target.data[o] = TINT_R;
      target.data[o + 1] = TINT_G;
      target.data[o + 2] = TINT_B;
    } else {
      target.data[o] = g;
      target.data[o + 1] = g;
      target.data[o + 2] = g;
    }
    target.data[o + 3] = 255;
  }
  return { applied: true, latencyMs: resp.latencyMs, coveredFraction: covered / expected };
}

export function isOkResponse(resp: ResliceResponse): resp is OkResponse {
  return resp.status === STATUS_OK;
}
