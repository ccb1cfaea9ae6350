/**
 * Reslice session: handshake, request issuing with client-side coalescing,
 * and response dispatch.
 *
 * Coalescing contract (mirrors the server's supersede policy): at most one
 * request is ever unanswered on the connection. While one is in flight, the
 * newest wanted plane is parked in `pending` and sent the moment the
 * in-flight response lands; intermediate poses are simply never transmitted.
 * Requests are also throttled to a configurable ceiling (default 30 Hz).
 */

import {
  decodeMessage,
  encodeHello,
  encodeResliceRequest,
  ENCODING_RAW8,
  MessageReader,
  PROTOCOL_VERSION,
  STATUS_ERROR,
  STATUS_OK,
  type ConfigOverrides,
  type HelloAck,
  type Message,
  type PoseTuple,
  type ResliceResponse,
} from "./protocol.js";

export interface Transport {
  send(data: Uint8Array): void;
  close(): void;
}

export interface PlaneRequest {
  pose: PoseTuple;
  width: number;
  height: number;
  pixelPitch: [number, number];
  config?: ConfigOverrides;
}

export interface RequestLogEntry {
  id: number;
  sentAtMs: number;
  pose: PoseTuple;
}

export interface SessionOptions {
  maxRequestHz?: number;
  now?: () => number; // injectable clock for tests
  schedule?: (cb: () => void, delayMs: number) => void;
}

export class VersionMismatchError extends Error {
  constructor(serverVersion: number) {
    super(
      `protocol version mismatch: explorer speaks v${PROTOCOL_VERSION}, ` +
        `server answered v${serverVersion}; upgrade whichever side is older`,
    );
  }
}

export class ResliceSession {
  readonly requestLog: RequestLogEntry[] = [];
  onResponse: ((resp: ResliceResponse) => void) | null = null;
  onError: ((err: Error) => void) | null = null;
  volumeInfo: HelloAck | null = null;

  private transport: Transport;
  private reader = new MessageReader();
  private nextId = 1;
  private inFlightId: number | null = null;
  private pending: PlaneRequest | null = null;
  private lastSentAt = -Infinity;
  private flushTimerArmed = false;
  private helloResolve: ((ack: HelloAck) => void) | null = null;
  private helloReject: ((err: Error) => void) | null = null;
  private readonly minIntervalMs: number;
  private readonly now: () => number;
  private readonly schedule: (cb: () => void, delayMs: number) => void;
  private _maxObservedInFlight = 0;
  private _inFlightCount = 0;

  constructor(transport: Transport, options: SessionOptions = {}) {
    this.transport = transport;
    this.minIntervalMs = 1000 / (options.maxRequestHz ?? 30);
    this.now = options.now ?? (() => performance.now());
    this.schedule = options.schedule ?? ((cb, ms) => setTimeout(cb, ms));
  }

  /** Feed raw bytes from the transport (WebSocket message, TCP chunk...). */
  receive(data: Uint8Array): void {
    let bodies: Uint8Array[];
    try {
      bodies = this.reader.feed(data);
    } catch (err) {
      this.onError?.(err as Error);
      return;
    }
    for (const body of bodies) {
      let msg: Message;
      try {
        msg = decodeMessage(body);
      } catch (err) {
        this.onError?.(err as Error);
        continue;
      }
      this.dispatch(msg);
    }
  }

  hello(): Promise<HelloAck> {
    // install the handlers before sending: a loopback transport may answer
    // synchronously from within send()
    const promise = new Promise<HelloAck>((resolve, reject) => {
      this.helloResolve = resolve;
      this.helloReject = reject;
    });
    this.transport.send(encodeHello());
    return promise;
  }

  /** Ask for a reslice of this plane; intermediate calls are coalesced. */
  requestReslice(plane: PlaneRequest): void {
    this.pending = plane;
    this.maybeSend();
  }

  get inFlight(): number {
    return this._inFlightCount;
  }

  /** Largest number of simultaneously unanswered requests ever observed. */
  get maxObservedInFlight(): number {
    return this._maxObservedInFlight;
  }

  get lastRequestedPose(): PoseTuple | null {
    return this.requestLog.length ? this.requestLog[this.requestLog.length - 1].pose : null;
  }

  close(): void {
    this.transport.close();
  }

  private dispatch(msg: Message): void {
    if (msg.type === "hello_ack") {
      this.volumeInfo = msg;
      if (msg.version !== PROTOCOL_VERSION) {
        const err = new VersionMismatchError(msg.version);
        this.helloReject?.(err);
        this.onError?.(err);
      } else {
        this.helloResolve?.(msg);
      }
      this.helloResolve = this.helloReject = null;
      return;
    }
    if (msg.type === "reslice_response") {
      if (msg.status !== STATUS_OK && this.helloReject && this.volumeInfo === null) {
        // server refused the handshake (e.g. version mismatch reported as error)
        const detail = msg.status === STATUS_ERROR ? msg.message : "handshake failed";
        this.helloReject(new Error(detail));
        this.helloResolve = this.helloReject = null;
        return;
      }
      if (msg.requestId === this.inFlightId) {
        this.inFlightId = null;
        this._inFlightCount = 0;
      }
      this.onResponse?.(msg);
      this.maybeSend();
    }
  }

  private maybeSend(): void {
    if (this.pending === null || this.inFlightId !== null) return;
    const wait = this.lastSentAt + this.minIntervalMs - this.now();
    if (wait > 0) {
      if (!this.flushTimerArmed) {
        this.flushTimerArmed = true;
        this.schedule(() => {
          this.flushTimerArmed = false;
          this.maybeSend();
        }, wait);
      }
      return;
    }
    const plane = this.pending;
    this.pending = null;
    const id = this.nextId++;
    this.inFlightId = id;
    this._inFlightCount = 1;
    this._maxObservedInFlight = Math.max(this._maxObservedInFlight, 1);
    this.lastSentAt = this.now();
    this.requestLog.push({ id, sentAtMs: this.lastSentAt, pose: plane.pose });
    this.transport.send(
      encodeResliceRequest({
        requestId: id,
        pose: plane.pose,
        width: plane.width,
        height: plane.height,
        pixelPitch: plane.pixelPitch,
        encoding: ENCODING_RAW8,
        config: plane.config,
      }),
    );
  }
}
