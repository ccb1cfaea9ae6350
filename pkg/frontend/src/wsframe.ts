/**
 * Minimal RFC 6455 WebSocket framing, enough for the local bridge: binary
 * messages, client masking, fragmentation, ping/pong and close. Pure
 * byte-level functions so the framing logic is unit-testable.
 */

export const OP_CONTINUATION = 0x0;
export const OP_TEXT = 0x1;
export const OP_BINARY = 0x2;
export const OP_CLOSE = 0x8;
export const OP_PING = 0x9;
export const OP_PONG = 0xa;

export interface WsFrame {
  fin: boolean;
  opcode: number;
  payload: Uint8Array;
}

/** Encode one unmasked server->client frame. */
export function encodeFrame(opcode: number, payload: Uint8Array, fin = true): Uint8Array {
  const n = payload.byteLength;
  let header: Uint8Array;
  if (n < 126) {
    header = new Uint8Array(2);
    header[1] = n;
  } else if (n < 65536) {
    header = new Uint8Array(4);
    header[1] = 126;
    header[2] = (n >>> 8) & 0xff;
    header[3] = n & 0xff;
  } else {
    header = new Uint8Array(10);
    header[1] = 127;
    // lengths beyond 2^53 are not representable here and never occur
    let rest = n;
    for (let i = 9; i >= 2; i--) {
      header[i] = rest & 0xff;
      rest = Math.floor(rest / 256);
    }
  }
  header[0] = (fin ? 0x80 : 0x00) | (opcode & 0x0f);
  const out = new Uint8Array(header.byteLength + n);
  out.set(header, 0);
  out.set(payload, header.byteLength);
  return out;
}

/**
 * Incremental frame parser. feed() returns completed frames; fragmented
 * messages are reassembled (continuation frames merge into the operand of
 * the initial opcode).
 */
export class FrameParser {
  private buf = new Uint8Array(0);
  private fragments: Uint8Array[] = [];
  private fragmentOpcode = 0;

  feed(data: Uint8Array): WsFrame[] {
    const merged = new Uint8Array(this.buf.byteLength + data.byteLength);
    merged.set(this.buf, 0);
    merged.set(data, this.buf.byteLength);
    this.buf = merged;
    const out: WsFrame[] = [];
    for (;;) {
      const frame = this.tryParseOne();
      if (frame === null) break;
      const assembled = this.assemble(frame);
      if (assembled !== null) out.push(assembled);
    }
    return out;
  }

  private assemble(frame: WsFrame): WsFrame | null {
    if (frame.opcode === OP_CONTINUATION) {
      this.fragments.push(frame.payload);
      if (!frame.fin) return null;
      const total = this.fragments.reduce((acc, f) => acc + f.byteLength, 0);
      const payload = new Uint8Array(total);
      let off = 0;
      for (const f of this.fragments) {
        payload.set(f, off);
        off += f.byteLength;
      }
      const opcode = this.fragmentOpcode;
      this.fragments = [];
      return { fin: true, opcode, payload };
    }
    if (!frame.fin) {
      this.fragments = [frame.payload];
      this.fragmentOpcode = frame.opcode;
      return null;
    }
    return frame;
  }

  private tryParseOne(): WsFrame | null {
    const buf = this.buf;
    if (buf.byteLength < 2) return null;
    const fin = (buf[0] & 0x80) !== 0;
    const opcode = buf[0] & 0x0f;
    const masked = (buf[1] & 0x80) !== 0;
    let len = buf[1] & 0x7f;
    let off = 2;
    if (len === 126) {
      if (buf.byteLength < off + 2) return null;
      len = (buf[2] << 8) | buf[3];
      off = 4;
    } else if (len === 127) {
      if (buf.byteLength < off + 8) return null;
      len = 0;
      for (let i = 0; i < 8; i++) len = len * 256 + buf[off + i];
      off = 10;
    }
    let mask: Uint8Array | null = null;
    if (masked) {
      if (buf.byteLength < off + 4) return null;
      mask = buf.subarray(off, off + 4);
      off += 4;
    }
    if (buf.byteLength < off + len) return null;
    const payload = buf.slice(off, off + len);
    if (mask) {
      for (let i = 0; i < payload.byteLength; i++) payload[i] ^= mask[i & 3];
    }
    this.buf = buf.slice(off + len);
    return { fin, opcode, payload };
  }
}
