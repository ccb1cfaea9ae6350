/**
 * Wire protocol for the reslice service, byte-compatible with the server:
 * u32 little-endian payload length, u8 message type, payload. The golden
 * fixtures under fixtures/protocol/ pin this layout for both sides.
 */

export const PROTOCOL_VERSION = 1;

export const MSG_HELLO = 1;
export const MSG_HELLO_ACK = 2;
export const MSG_RESLICE_REQUEST = 3;
export const MSG_RESLICE_RESPONSE = 4;

export const STATUS_OK = 0;
export const STATUS_SUPERSEDED = 1;
export const STATUS_ERROR = 2;

export const ENCODING_RAW8 = 0;
export const ENCODING_ZLIB = 1;

export const MAX_MESSAGE_SIZE = 64 * 1024 * 1024;

export interface HelloAck {
  type: "hello_ack";
  version: number;
  volumeKind: number;
  origin: [number, number, number];
  voxelSize: number;
  dims: [number, number, number];
  sampleCount: number;
}

export interface ConfigOverrides {
  interpRadius: number;
  normalThresholdDeg: number;
  inplaneThresholdDeg: number;
  kNormal: number;
  kInplane: number;
  kDist: number;
}

/** tx, ty, tz, qw, qx, qy, qz */
export type PoseTuple = [number, number, number, number, number, number, number];

export interface ResliceRequest {
  requestId: number;
  pose: PoseTuple;
  width: number;
  height: number;
  pixelPitch: [number, number];
  encoding: number;
  config?: ConfigOverrides;
}

export interface OkResponse {
  type: "reslice_response";
  status: typeof STATUS_OK;
  requestId: number;
  latencyMs: number;
  width: number;
  height: number;
  encoding: number;
  image: Uint8Array;
  coverage: Uint8Array; // packed bits, row-major, MSB first
}

export interface SupersededResponse {
  type: "reslice_response";
  status: typeof STATUS_SUPERSEDED;
  requestId: number;
  latencyMs: number;
  supersededBy: number;
}

export interface ErrorResponse {
  type: "reslice_response";
  status: typeof STATUS_ERROR;
  requestId: number;
  latencyMs: number;
  message: string;
}

export type ResliceResponse = OkResponse | SupersededResponse | ErrorResponse;
export type Message = { type: "hello"; version: number } | HelloAck | DecodedRequest | ResliceResponse;

export interface DecodedRequest extends ResliceRequest {
  type: "reslice_request";
}

class Writer {
  private buf: number[] = [];

  u8(v: number): this {
    this.buf.push(v & 0xff);
    return this;
  }

  u16(v: number): this {
    this.buf.push(v & 0xff, (v >>> 8) & 0xff);
    return this;
  }

  u32(v: number): this {
    this.buf.push(v & 0xff, (v >>> 8) & 0xff, (v >>> 16) & 0xff, (v >>> 24) & 0xff);
    return this;
  }

  f64(v: number): this {
    const scratch = new DataView(new ArrayBuffer(8));
    scratch.setFloat64(0, v, true);
    for (let i = 0; i < 8; i++) this.buf.push(scratch.getUint8(i));
    return this;
  }

  bytes(data: Uint8Array): this {
    for (const b of data) this.buf.push(b);
    return this;
  }

  framed(msgType: number): Uint8Array {
    const body = new Uint8Array(this.buf.length + 1);
    body[0] = msgType;
    body.set(this.buf, 1);
    const out = new Uint8Array(4 + body.length);
    new DataView(out.buffer).setUint32(0, body.length, true);
    out.set(body, 4);
    return out;
  }
}

export function encodeHello(version: number = PROTOCOL_VERSION): Uint8Array {
  return new Writer().u8(version).framed(MSG_HELLO);
}

export function encodeResliceRequest(req: ResliceRequest): Uint8Array {
  const w = new Writer();
  w.u32(req.requestId);
  for (const value of req.pose) w.f64(value);
  w.u16(req.width).u16(req.height);
  w.f64(req.pixelPitch[0]).f64(req.pixelPitch[1]);
  w.u8(req.encoding);
  if (req.config) {
    w.u8(1);
    w.f64(req.config.interpRadius)
      .f64(req.config.normalThresholdDeg)
      .f64(req.config.inplaneThresholdDeg)
      .f64(req.config.kNormal)
      .f64(req.config.kInplane)
      .f64(req.config.kDist);
  } else {
    w.u8(0);
  }
  return w.framed(MSG_RESLICE_REQUEST);
}

class Reader {
  private view: DataView;
  private off = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  u8(): number {
    this.check(1);
    return this.view.getUint8(this.off++);
  }

  u16(): number {
    this.check(2);
    const v = this.view.getUint16(this.off, true);
    this.off += 2;
    return v;
  }

  u32(): number {
    this.check(4);
    const v = this.view.getUint32(this.off, true);
    this.off += 4;
    return v;
  }

  u64(): number {
    this.check(8);
    const v = this.view.getBigUint64(this.off, true);
    this.off += 8;
    return Number(v);
  }

  f64(): number {
    this.check(8);
    const v = this.view.getFloat64(this.off, true);
    this.off += 8;
    return v;
  }

  bytes(n: number): Uint8Array {
    this.check(n);
    const out = this.data.subarray(this.off, this.off + n);
    this.off += n;
    return out;
  }

  done(): void {
    if (this.off !== this.data.byteLength) {
      throw new ProtocolError(`${this.data.byteLength - this.off} trailing bytes in message`);
    }
  }

  private check(n: number): void {
    if (this.off + n > this.data.byteLength) throw new ProtocolError("message truncated");
  }
}

export class ProtocolError extends Error {}

/** Decode one framed message body (type byte + payload). */
export function decodeMessage(body: Uint8Array): Message {
  if (body.length === 0) throw new ProtocolError("empty message");
  const msgType = body[0];
  const r = new Reader(body.subarray(1));
  switch (msgType) {
    case MSG_HELLO: {
      const version = r.u8();
      r.done();
      return { type: "hello", version };
    }
    case MSG_HELLO_ACK: {
      const version = r.u8();
      const volumeKind = r.u8();
      const origin: [number, number, number] = [r.f64(), r.f64(), r.f64()];
      const voxelSize = r.f64();
      const dims: [number, number, number] = [r.u32(), r.u32(), r.u32()];
      const sampleCount = r.u64();
      r.done();
      return { type: "hello_ack", version, volumeKind, origin, voxelSize, dims, sampleCount };
    }
    case MSG_RESLICE_REQUEST: {
      const requestId = r.u32();
      const pose = [r.f64(), r.f64(), r.f64(), r.f64(), r.f64(), r.f64(), r.f64()] as PoseTuple;
      const width = r.u16();
      const height = r.u16();
      const pixelPitch: [number, number] = [r.f64(), r.f64()];
      const encoding = r.u8();
      const hasConfig = r.u8();
      let config: ConfigOverrides | undefined;
      if (hasConfig === 1) {
        config = {
          interpRadius: r.f64(),
          normalThresholdDeg: r.f64(),
          inplaneThresholdDeg: r.f64(),
          kNormal: r.f64(),
          kInplane: r.f64(),
          kDist: r.f64(),
        };
      } else if (hasConfig !== 0) {
        throw new ProtocolError(`bad has_config flag ${hasConfig}`);
      }
      r.done();
      return { type: "reslice_request", requestId, pose, width, height, pixelPitch, encoding, config };
    }
    case MSG_RESLICE_RESPONSE: {
      const requestId = r.u32();
      const status = r.u8();
      const latencyMs = r.f64();
      if (status === STATUS_OK) {
        const width = r.u16();
        const height = r.u16();
        const encoding = r.u8();
        const image = r.bytes(r.u32()).slice();
        const coverage = r.bytes(r.u32()).slice();
        r.done();
        return { type: "reslice_response", status, requestId, latencyMs, width, height, encoding, image, coverage };
      }
      if (status === STATUS_SUPERSEDED) {
        const supersededBy = r.u32();
        r.done();
        return { type: "reslice_response", status, requestId, latencyMs, supersededBy };
      }
      if (status === STATUS_ERROR) {
        const raw = r.bytes(r.u16());
        r.done();
        return {
          type: "reslice_response",
          status,
          requestId,
          latencyMs,
          message: new TextDecoder().decode(raw),
        };
      }
      throw new ProtocolError(`unknown response status ${status}`);
    }
    default:
      throw new ProtocolError(`unknown message type ${msgType}`);
  }
}

/** Unpack a row-major MSB-first coverage bitmap into a boolean array. */
export function unpackCoverage(packed: Uint8Array, width: number, height: number): Uint8Array {
  const total = width * height;
  if (packed.length * 8 < total) throw new ProtocolError("coverage payload too small");
  const out = new Uint8Array(total);
  for (let i = 0; i < total; i++) {
    out[i] = (packed[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return out;
}

/** Incremental defragmenter: feed stream chunks, get complete message bodies. */
export class MessageReader {
  private buf = new Uint8Array(0);

  feed(data: Uint8Array): Uint8Array[] {
    const merged = new Uint8Array(this.buf.byteLength + data.byteLength);
    merged.set(this.buf, 0);
    merged.set(data, this.buf.byteLength);
    this.buf = merged;
    const out: Uint8Array[] = [];
    for (;;) {
      if (this.buf.byteLength < 4) break;
      const length = new DataView(this.buf.buffer, this.buf.byteOffset, 4).getUint32(0, true);
      if (length > MAX_MESSAGE_SIZE) throw new ProtocolError(`message of ${length} bytes exceeds limit`);
      if (this.buf.byteLength < 4 + length) break;
      out.push(this.buf.slice(4, 4 + length));
      this.buf = this.buf.slice(4 + length);
    }
    return out;
  }
}
