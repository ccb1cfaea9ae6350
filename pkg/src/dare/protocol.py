"""Length-prefixed binary wire protocol for the reslice service.

Framing: u32 little-endian payload length (excluding the length field
itself), then u8 message type, then the type-specific payload. All numbers
little-endian. Version negotiation happens in HELLO/HELLO_ACK; the version
is a single byte.

Message layouts (after the type byte):

  HELLO (1), client -> server:
      u8 protocol_version

  HELLO_ACK (2), server -> client:
      u8 protocol_version, u8 volume_kind (0 directional, 1 scalar),
      3 x f64 volume origin (mm), f64 voxel size (mm), 3 x u32 grid dims,
      u64 sample count

  RESLICE_REQUEST (3), client -> server:
      u32 request id,
      7 x f64 pose (tx ty tz qw qx qy qz),
      u16 width, u16 height, f64 pitch_x, f64 pitch_y,
      u8 encoding (0 raw8, 1 zlib),
      u8 has_config; if 1:
          f64 interp_radius, f64 normal_threshold_deg, f64 inplane_threshold_deg,
          f64 k_normal, f64 k_inplane, f64 k_dist

  RESLICE_RESPONSE (4), server -> client:
      u32 request id, u8 status (0 ok, 1 superseded, 2 error), f64 latency_ms
      ok:          u16 width, u16 height, u8 encoding,
                   u32 n, n image bytes, u32 m, m packed coverage bytes
                   (row-major bits, MSB first)
      superseded:  u32 superseding request id
      error:       u16 n, n bytes utf-8 message
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

PROTOCOL_VERSION = 1

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_RESLICE_REQUEST = 3
MSG_RESLICE_RESPONSE = 4

STATUS_OK = 0
STATUS_SUPERSEDED = 1
STATUS_ERROR = 2

ENCODING_RAW8 = 0
ENCODING_ZLIB = 1

VOLUME_KIND_DIRECTIONAL = 0
VOLUME_KIND_SCALAR = 1

MAX_MESSAGE_SIZE = 64 * 1024 * 1024

_CONFIG_FIELDS = ("interp_radius", "normal_threshold_deg", "inplane_threshold_deg",
                  "k_normal", "k_inplane", "k_dist")
# wire-level config blocks are fixed-size; unspecified overrides are filled
# with the library defaults
_CONFIG_DEFAULTS = {
    "interp_radius": 0.125,
    "normal_threshold_deg": 25.0,
    "inplane_threshold_deg": 15.0,
    "k_normal": 10.0,
    "k_inplane": 5.0,
    "k_dist": 2.0,
}


@dataclass(frozen=True)
class Hello:
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    version: int
    volume_kind: int
    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]
    sample_count: int


@dataclass(frozen=True)
class ResliceRequest:
    request_id: int
    pose: tuple[float, ...]          # tx ty tz qw qx qy qz
    width: int
    height: int
    pixel_pitch: tuple[float, float]
    encoding: int = ENCODING_RAW8
    config: dict | None = None       # keys from _CONFIG_FIELDS


@dataclass(frozen=True)
class ResliceResponse:
    request_id: int
    status: int
    latency_ms: float
    width: int = 0
    height: int = 0
    encoding: int = ENCODING_RAW8
    image: bytes = b""
    coverage: bytes = b""            # packed bits, row-major, MSB first
    superseded_by: int = 0
    message: str = ""


def frame_message(msg_type: int, payload: bytes) -> bytes:
    body = struct.pack("<B", msg_type) + payload
    return struct.pack("<I", len(body)) + body


def encode_hello(msg: Hello) -> bytes:
    return frame_message(MSG_HELLO, struct.pack("<B", msg.version))


def encode_hello_ack(msg: HelloAck) -> bytes:
    payload = struct.pack(
        "<BB3dd3IQ", msg.version, msg.volume_kind,
        *msg.origin, msg.voxel_size, *msg.dims, msg.sample_count,
    )
    return frame_message(MSG_HELLO_ACK, payload)


def encode_reslice_request(msg: ResliceRequest) -> bytes:
    payload = struct.pack(
        "<I7dHH2dB", msg.request_id, *msg.pose,
        msg.width, msg.height, *msg.pixel_pitch, msg.encoding,
    )
    if msg.config:
        unknown = set(msg.config) - set(_CONFIG_FIELDS)
        if unknown:
            raise ProtocolError(f"unknown config override fields {sorted(unknown)}")
        values = [float(msg.config.get(k, _CONFIG_DEFAULTS[k])) for k in _CONFIG_FIELDS]
        payload += struct.pack("<B6d", 1, *values)
    else:
        payload += struct.pack("<B", 0)
    return frame_message(MSG_RESLICE_REQUEST, payload)


def encode_reslice_response(msg: ResliceResponse) -> bytes:
    head = struct.pack("<IBd", msg.request_id, msg.status, msg.latency_ms)
    if msg.status == STATUS_OK:
        body = head + struct.pack("<HHB", msg.width, msg.height, msg.encoding)
        body += struct.pack("<I", len(msg.image)) + msg.image
        body += struct.pack("<I", len(msg.coverage)) + msg.coverage
    elif msg.status == STATUS_SUPERSEDED:
        body = head + struct.pack("<I", msg.superseded_by)
    else:
        raw = msg.message.encode("utf-8")
        body = head + struct.pack("<H", len(raw)) + raw
    return frame_message(MSG_RESLICE_RESPONSE, body)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise ProtocolError("message truncated")
        out = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return out

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ProtocolError("message truncated")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def done(self):
        if self.off != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.off} trailing bytes in message")


def decode_message(body: bytes):
    """Decode one framed message body (type byte + payload) into its dataclass."""
    if not body:
        raise ProtocolError("empty message")
    msg_type = body[0]
    cur = _Cursor(body[1:])
    if msg_type == MSG_HELLO:
        (version,) = cur.unpack("<B")
        cur.done()
        return Hello(version)
    if msg_type == MSG_HELLO_ACK:
        fields = cur.unpack("<BB3dd3IQ")
        cur.done()
        return HelloAck(
            version=fields[0], volume_kind=fields[1],
            origin=tuple(fields[2:5]), voxel_size=fields[5],
            dims=tuple(fields[6:9]), sample_count=fields[9],
        )
    if msg_type == MSG_RESLICE_REQUEST:
        fields = cur.unpack("<I7dHH2dB")
        (has_config,) = cur.unpack("<B")
        config = None
        if has_config == 1:
            values = cur.unpack("<6d")
            config = dict(zip(_CONFIG_FIELDS, values))
        elif has_config != 0:
            raise ProtocolError(f"bad has_config flag {has_config}")
        cur.done()
        return ResliceRequest(
            request_id=fields[0], pose=tuple(fields[1:8]),
            width=fields[8], height=fields[9], pixel_pitch=tuple(fields[10:12]),
            encoding=fields[12], config=config,
        )
    if msg_type == MSG_RESLICE_RESPONSE:
        request_id, status, latency = cur.unpack("<IBd")
        if status == STATUS_OK:
            width, height, encoding = cur.unpack("<HHB")
            (n,) = cur.unpack("<I")
            image = cur.take(n)
            (m,) = cur.unpack("<I")
            coverage = cur.take(m)
            cur.done()
            return ResliceResponse(
                request_id=request_id, status=status, latency_ms=latency,
                width=width, height=height, encoding=encoding,
                image=image, coverage=coverage,
            )
        if status == STATUS_SUPERSEDED:
            (by,) = cur.unpack("<I")
            cur.done()
            return ResliceResponse(
                request_id=request_id, status=status, latency_ms=latency, superseded_by=by
            )
        if status == STATUS_ERROR:
            (n,) = cur.unpack("<H")
            message = cur.take(n).decode("utf-8")
            cur.done()
            return ResliceResponse(
                request_id=request_id, status=status, latency_ms=latency, message=message
            )
        raise ProtocolError(f"unknown response status {status}")
    raise ProtocolError(f"unknown message type {msg_type}")


def encode_image_payload(pixels: np.ndarray, encoding: int) -> bytes:
    raw = np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()
    if encoding == ENCODING_RAW8:
        return raw
    if encoding == ENCODING_ZLIB:
        return zlib.compress(raw, level=6)
    raise ProtocolError(f"unknown image encoding {encoding}")


def decode_image_payload(data: bytes, encoding: int, width: int, height: int) -> np.ndarray:
    if encoding == ENCODING_ZLIB:
        data = zlib.decompress(data)
    elif encoding != ENCODING_RAW8:
        raise ProtocolError(f"unknown image encoding {encoding}")
    if len(data) != width * height:
        raise ProtocolError(f"image payload {len(data)} bytes != {width}x{height}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def pack_coverage(coverage: np.ndarray) -> bytes:
    return np.packbits(np.asarray(coverage, dtype=bool), axis=None).tobytes()


def unpack_coverage(data: bytes, width: int, height: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits.size < width * height:
        raise ProtocolError("coverage payload too small")
    return bits[: width * height].reshape(height, width).astype(bool)


class MessageReader:
    """Incremental defragmenter: feed() raw stream bytes, iterate messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                break
            (length,) = struct.unpack_from("<I", self._buf, 0)
            if length > MAX_MESSAGE_SIZE:
                raise ProtocolError(f"message of {length} bytes exceeds limit")
            if len(self._buf) < 4 + length:
                break
            out.append(bytes(self._buf[4 : 4 + length]))
            del self._buf[: 4 + length]
        return out


def read_message(sock) -> bytes | None:
    """Blocking read of one framed message body from a socket; None on EOF."""
    header = _read_exactly(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    if length > MAX_MESSAGE_SIZE:
        raise ProtocolError(f"message of {length} bytes exceeds limit")
    body = _read_exactly(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-message")
    return body


def _read_exactly(sock, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else None
        buf.extend(chunk)
    return bytes(buf)
