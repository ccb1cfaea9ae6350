"""End-to-end check of the explorer transport path: a WebSocket client sent
through the Node bridge must see byte-identical protocol traffic to a direct
TCP client.

Skipped when the frontend has not been built (the primary suite must run
standalone) or node is unavailable.
"""
import base64
import hashlib
import os
import shutil
import socket
import struct
import subprocess
import time

import numpy as np
import pytest

from dare import protocol
from dare.reslice import ReslicePlane, ResliceConfig, reslice
from dare.geometry import Pose, Quaternion
from dare.service import ResliceServer

from conftest import random_volume

FRONTEND = os.path.join(os.path.dirname(__file__), "..", "frontend")
BRIDGE_JS = os.path.join(FRONTEND, "dist", "bridge.js")

pytestmark = pytest.mark.skipif(
    not os.path.exists(BRIDGE_JS) or shutil.which("node") is None,
    reason="frontend not built or node missing; primary suite runs without it",
)

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class WebSocketClient:
    """Just enough RFC 6455 to exercise the bridge: binary frames, masked."""

    def __init__(self, host, port, path):
        self.sock = socket.create_connection((host, port), timeout=20)
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET {path} HTTP/1.1\r\nHost: {host}:{port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(request.encode())
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("bridge closed during handshake")
            response += chunk
        head, _, rest = response.partition(b"\r\n\r\n")
        assert b"101" in head.split(b"\r\n")[0], head
        accept = base64.b64encode(
            hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
        assert f"Sec-WebSocket-Accept: {accept}".encode() in head
        self._buf = bytearray(rest)

    def send_binary(self, payload: bytes):
        mask = os.urandom(4)
        n = len(payload)
        if n < 126:
            header = struct.pack("!BB", 0x82, 0x80 | n)
        elif n < 65536:
            header = struct.pack("!BBH", 0x82, 0x80 | 126, n)
        else:
            header = struct.pack("!BBQ", 0x82, 0x80 | 127, n)
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(header + mask + masked)

    def _fill(self, n):
        while len(self._buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("bridge closed")
            self._buf.extend(chunk)

    def recv_binary(self) -> bytes:
        """Read one (possibly fragmented) binary message."""
        payload = bytearray()
        while True:
            self._fill(2)
            b0, b1 = self._buf[0], self._buf[1]
            fin = bool(b0 & 0x80)
            length = b1 & 0x7F
            off = 2
            if length == 126:
                self._fill(4)
                length = struct.unpack("!H", bytes(self._buf[2:4]))[0]
                off = 4
            elif length == 127:
                self._fill(10)
                length = struct.unpack("!Q", bytes(self._buf[2:10]))[0]
                off = 10
            self._fill(off + length)
            payload.extend(self._buf[off : off + length])
            del self._buf[: off + length]
            if fin:
                return bytes(payload)

    def close(self):
        self.sock.close()


@pytest.fixture(scope="module")
def stack():
    rng = np.random.default_rng(42)
    volume = random_volume(rng, 30_000, extent=12.0, voxel_size=0.25)
    server = ResliceServer(volume, port=0)
    server.start()
    bridge = subprocess.Popen(
        ["node", BRIDGE_JS, "--port", "0"],
        cwd=FRONTEND, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
    )
    # the bridge prints its URL once listening; with --port 0 we need the
    # actual port, so parse the line
    line = bridge.stdout.readline()
    port = int(line.split("127.0.0.1:")[1].split("/")[0])
    yield volume, server, port
    bridge.terminate()
    bridge.wait(timeout=5)
    server.stop()


def ws_messages(client: WebSocketClient, reader: protocol.MessageReader):
    while True:
        chunk = client.recv_binary()
        bodies = reader.feed(chunk)
        if bodies:
            return [protocol.decode_message(b) for b in bodies]


def test_reslice_through_websocket_bridge(stack):
    volume, server, bridge_port = stack
    client = WebSocketClient("127.0.0.1", bridge_port, f"/bridge?port={server.port}")
    reader = protocol.MessageReader()

    client.send_binary(protocol.encode_hello(protocol.Hello()))
    (ack,) = ws_messages(client, reader)
    assert isinstance(ack, protocol.HelloAck)
    assert ack.dims == volume.dims

    request = protocol.ResliceRequest(
        request_id=31, pose=(2.0, 2.0, 6.0, 1.0, 0.0, 0.0, 0.0),
        width=48, height=40, pixel_pitch=(0.25, 0.25),
    )
    client.send_binary(protocol.encode_reslice_request(request))
    messages = []
    while not messages:
        messages = ws_messages(client, reader)
    (resp,) = messages
    client.close()

    assert resp.request_id == 31 and resp.status == protocol.STATUS_OK
    plane = ReslicePlane(Pose(Quaternion.identity(), (2.0, 2.0, 6.0)), 48, 40, (0.25, 0.25))
    expected = reslice(volume, plane, ResliceConfig())
    np.testing.assert_array_equal(
        protocol.decode_image_payload(resp.image, resp.encoding, 48, 40), expected.pixels)
    np.testing.assert_array_equal(
        protocol.unpack_coverage(resp.coverage, 48, 40), expected.coverage)


def test_bridge_serves_static_assets(stack):
    _, _, bridge_port = stack
    import urllib.request

    with urllib.request.urlopen(f"http://127.0.0.1:{bridge_port}/", timeout=10) as resp:
        body = resp.read().decode()
    assert "Reslice Explorer" in body
    with urllib.request.urlopen(
        f"http://127.0.0.1:{bridge_port}/dist/app.js", timeout=10
    ) as resp:
        assert "probe" in resp.read().decode().lower()
