"""Real-time reslice service over TCP.

One server holds one sealed volume (directional or scalar). Each connection
gets a reader thread and a worker thread; the worker is the only writer on
the socket, so responses keep request order. When several reslice requests
pile up on one connection while a reslice is in flight, all but the newest
are answered with a "superseded" status carrying the id that replaced them:
a live preview only ever needs the latest pose, and nothing is dropped
silently.

Framing errors (unparseable length prefix, dead socket) are unrecoverable
and close the connection; decodable-but-malformed messages get an error
response and the connection stays open, closing only after two consecutive
decode failures.
"""
from __future__ import annotations

import math
import os
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import protocol
from .baseline import ScalarVolume, reslice_trilinear
from .errors import ProtocolError
from .geometry import Pose, Quaternion
from .reslice import ReslicePlane, ResliceConfig, reslice
from .volume import DirectionalVolume

DEFAULT_PORT_ENV = "DARE_PORT"
DEFAULT_PORT = 7355

MAX_IMAGE_DIM = 4096
MAX_RADIUS_VOXELS = 8.0  # per-request radius overrides are clamped to bound latency


def default_port() -> int:
    return int(os.environ.get(DEFAULT_PORT_ENV, DEFAULT_PORT))


@dataclass
class _QueuedRequest:
    message: protocol.ResliceRequest
    enqueued_at: float


class _Connection:
    def __init__(self, server: "ResliceServer", sock: socket.socket):
        self.server = server
        self.sock = sock
        self.items: list = []
        self.cond = threading.Condition()
        self.closed = False

    # -- reader side -------------------------------------------------------

    def reader_loop(self):
        consecutive_errors = 0
        while True:
            try:
                body = protocol.read_message(self.sock)
            except (ProtocolError, OSError) as e:
                self._push(("fatal", str(e)))
                return
            if body is None:
                self._push(("eof", None))
                return
            try:
                msg = protocol.decode_message(body)
            except ProtocolError as e:
                consecutive_errors += 1
                self._push(("decode_error", str(e), consecutive_errors >= 2))
                if consecutive_errors >= 2:
                    return
                continue
            consecutive_errors = 0
            self._push(("message", msg))

    def _push(self, item):
        with self.cond:
            self.items.append(item)
            self.cond.notify()

    # -- worker side -------------------------------------------------------

    def worker_loop(self):
        handshaken = False
        try:
            while True:
                with self.cond:
                    while not self.items:
                        self.cond.wait()
                    batch, self.items = self.items, []
                pending: list[_QueuedRequest] = []
                stop = False
                for item in batch:
                    kind = item[0]
                    if kind == "message" and isinstance(item[1], protocol.ResliceRequest):
                        pending.append(_QueuedRequest(item[1], time.perf_counter()))
                        continue
                    # anything else breaks the request run: flush it first
                    self._flush_requests(pending, handshaken)
                    pending = []
                    if kind == "message":
                        handshaken, stop = self._handle_control(item[1], handshaken)
                    elif kind == "decode_error":
                        self._send(protocol.ResliceResponse(
                            request_id=0, status=protocol.STATUS_ERROR,
                            latency_ms=1e-3, message=f"cannot decode message: {item[1]}",
                        ))
                        stop = bool(item[2])
                    else:  # eof / fatal
                        stop = True
                    if stop:
                        break
                if not stop:
                    self._flush_requests(pending, handshaken)
                if stop:
                    return
        finally:
            self._close()

    def _handle_control(self, msg, handshaken) -> tuple[bool, bool]:
        if isinstance(msg, protocol.Hello):
            if msg.version != protocol.PROTOCOL_VERSION:
                self._send(protocol.ResliceResponse(
                    request_id=0, status=protocol.STATUS_ERROR, latency_ms=1e-3,
                    message=f"unsupported protocol version {msg.version}, "
                            f"server speaks {protocol.PROTOCOL_VERSION}",
                ))
                return handshaken, True
            self._send(protocol.encode_hello_ack(self.server.hello_ack()), raw=True)
            return True, False
        self._send(protocol.ResliceResponse(
            request_id=0, status=protocol.STATUS_ERROR, latency_ms=1e-3,
            message=f"unexpected message {type(msg).__name__}",
        ))
        return handshaken, False

    def _flush_requests(self, pending: list[_QueuedRequest], handshaken: bool):
        if not pending:
            return
        if not handshaken:
            for q in pending:
                self._send(self._error(q, "handshake required before reslice requests"))
            return
        newest = pending[-1]
        for q in pending[:-1]:
            self._send(protocol.ResliceResponse(
                request_id=q.message.request_id,
                status=protocol.STATUS_SUPERSEDED,
                latency_ms=self._elapsed(q),
                superseded_by=newest.message.request_id,
            ))
        self._send(self.server.process_request(newest))

    def _error(self, q: _QueuedRequest, message: str) -> protocol.ResliceResponse:
        return protocol.ResliceResponse(
            request_id=q.message.request_id, status=protocol.STATUS_ERROR,
            latency_ms=self._elapsed(q), message=message,
        )

    @staticmethod
    def _elapsed(q: _QueuedRequest) -> float:
        return max(1e-3, (time.perf_counter() - q.enqueued_at) * 1000.0)

    def _send(self, response, raw: bool = False):
        data = response if raw else protocol.encode_reslice_response(response)
        try:
            self.sock.sendall(data)
        except OSError:
            raise _ConnectionGone()

    def _close(self):
        if not self.closed:
            self.closed = True
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


class _ConnectionGone(Exception):
    pass


class ResliceServer:
    """Serves one sealed volume; safe for any number of concurrent clients."""

    def __init__(self, volume: DirectionalVolume | ScalarVolume,
                 host: str = "127.0.0.1", port: int | None = None,
                 config: ResliceConfig | None = None):
        self.volume = volume
        self.host = host
        self.port = default_port() if port is None else port
        self.config = config or ResliceConfig()
        self.directional = isinstance(volume, DirectionalVolume)
        self._sock: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._running = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> int:
        """Bind and start accepting in a background thread; returns the port."""
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen(16)
        self.port = self._sock.getsockname()[1]
        self._running = True
        t = threading.Thread(target=self._accept_loop, name="dare-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self.port

    def stop(self):
        self._running = False
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def serve_forever(self):
        if self._sock is None:
            self.start()
        try:
            while self._running:
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _accept_loop(self):
        while self._running and self._sock is not None:
            try:
                client, _ = self._sock.accept()
            except OSError:
                return
            client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(self, client)
            threading.Thread(target=conn.reader_loop, name="dare-reader", daemon=True).start()
            threading.Thread(target=self._worker, args=(conn,), name="dare-worker", daemon=True).start()

    def _worker(self, conn: _Connection):
        try:
            conn.worker_loop()
        except _ConnectionGone:
            conn._close()

    # -- request handling ----------------------------------------------------

    def hello_ack(self) -> protocol.HelloAck:
        kind = protocol.VOLUME_KIND_DIRECTIONAL if self.directional else protocol.VOLUME_KIND_SCALAR
        count = self.volume.sample_count if self.directional else self.volume.observed_count
        return protocol.HelloAck(
            version=protocol.PROTOCOL_VERSION,
            volume_kind=kind,
            origin=tuple(float(c) for c in self.volume.origin),
            voxel_size=self.volume.voxel_size,
            dims=self.volume.dims,
            sample_count=count,
        )

    def process_request(self, q: _QueuedRequest) -> protocol.ResliceResponse:
        msg = q.message
        try:
            plane, cfg = self._validate(msg)
            if self.directional:
                image = reslice(self.volume, plane, cfg)
            else:
                image = reslice_trilinear(self.volume, plane)
            payload = protocol.encode_image_payload(image.pixels, msg.encoding)
            coverage = protocol.pack_coverage(image.coverage)
        except Exception as e:  # answer, never hang the connection
            return protocol.ResliceResponse(
                request_id=msg.request_id, status=protocol.STATUS_ERROR,
                latency_ms=_Connection._elapsed(q), message=str(e),
            )
        return protocol.ResliceResponse(
            request_id=msg.request_id, status=protocol.STATUS_OK,
            latency_ms=_Connection._elapsed(q),
            width=msg.width, height=msg.height, encoding=msg.encoding,
            image=payload, coverage=coverage,
        )

    def _validate(self, msg: protocol.ResliceRequest) -> tuple[ReslicePlane, ResliceConfig]:
        tx, ty, tz, qw, qx, qy, qz = msg.pose
        norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"pose.rotation is not a unit quaternion (norm {norm:.6f})")
        if not all(np.isfinite(msg.pose)):
            raise ValueError("pose contains non-finite values")
        if not (1 <= msg.width <= MAX_IMAGE_DIM and 1 <= msg.height <= MAX_IMAGE_DIM):
            raise ValueError(f"width/height must be 1..{MAX_IMAGE_DIM}")
        if msg.pixel_pitch[0] <= 0 or msg.pixel_pitch[1] <= 0:
            raise ValueError("pixel_pitch must be positive")
        if msg.encoding not in (protocol.ENCODING_RAW8, protocol.ENCODING_ZLIB):
            raise ValueError(f"encoding must be raw8 (0) or zlib (1), got {msg.encoding}")
        cfg = self.config
        if msg.config:
            cfg = self._clamped_config(msg.config)
        plane = ReslicePlane(
            pose=Pose(Quaternion(qw, qx, qy, qz).normalized(), (tx, ty, tz)),
            width=msg.width, height=msg.height,
            pixel_pitch=(msg.pixel_pitch[0], msg.pixel_pitch[1]),
        )
        return plane, cfg

    def _clamped_config(self, overrides: dict) -> ResliceConfig:
        voxel = self.volume.voxel_size
        radius = float(overrides.get("interp_radius", self.config.interp_radius))
        radius = min(max(radius, 0.05 * voxel), MAX_RADIUS_VOXELS * voxel)

        def clamp(key, default, lo, hi):
            return min(max(float(overrides.get(key, default)), lo), hi)

        return ResliceConfig(
            interp_radius=radius,
            normal_threshold_deg=clamp("normal_threshold_deg", self.config.normal_threshold_deg, 0.1, 89.9),
            inplane_threshold_deg=clamp("inplane_threshold_deg", self.config.inplane_threshold_deg, 0.1, 89.9),
            k_normal=clamp("k_normal", self.config.k_normal, 0.0, 1e3),
            k_inplane=clamp("k_inplane", self.config.k_inplane, 0.0, 1e3),
            k_dist=clamp("k_dist", self.config.k_dist, 0.0, 1e3),
            unassigned_value=self.config.unassigned_value,
        )


class ResliceServiceClient:
    """Minimal synchronous client used by tests and the CLI."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def hello(self) -> protocol.HelloAck:
        self.send_raw(protocol.encode_hello(protocol.Hello()))
        ack = self.read_message()
        if not isinstance(ack, protocol.HelloAck):
            raise ProtocolError(f"expected HelloAck, got {ack}")
        return ack

    def send_request(self, request: protocol.ResliceRequest):
        self.send_raw(protocol.encode_reslice_request(request))

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def read_message(self):
        body = protocol.read_message(self.sock)
        if body is None:
            return None
        return protocol.decode_message(body)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
