"""Binary portable graymap (P5) and bitmap (P4) read/write.

Used for reslice outputs, coverage sidecars and sweep masks; deliberately
minimal (maxval 255, binary variants only).
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidArgumentError("write_pgm expects a 2D uint8 array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, maxval, pixels = _parse_header(path, data, expect=b"P5")
    if maxval != 255:
        raise InvalidArgumentError(f"{path}: only maxval 255 supported, got {maxval}")
    if len(pixels) < w * h:
        raise InvalidArgumentError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels[: w * h], dtype=np.uint8).reshape(h, w).copy()


def write_pbm(path, bits: np.ndarray) -> None:
    """Coverage bitmap: True = covered. P4 packs rows MSB-first."""
    arr = np.asarray(bits, dtype=bool)
    if arr.ndim != 2:
        raise InvalidArgumentError("write_pbm expects a 2D boolean array")
    h, w = arr.shape
    packed = np.packbits(arr, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode("ascii"))
        fh.write(packed.tobytes())


def read_pbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    _, w, h, _, payload = _parse_header(path, data, expect=b"P4")
    row_bytes = (w + 7) // 8
    if len(payload) < row_bytes * h:
        raise InvalidArgumentError(f"{path}: truncated bitmap data")
    rows = np.frombuffer(payload[: row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(rows, axis=1)[:, :w].astype(bool)


def _parse_header(path, data: bytes, expect: bytes):
    # header tokens separated by whitespace; comments (#...) allowed
    tokens: list[bytes] = []
    i = 0
    want = 3 if expect == b"P4" else 4
    while len(tokens) < want:
        if i >= len(data):
            raise InvalidArgumentError(f"{path}: truncated header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    i += 1  # single whitespace after the last header token
    if tokens[0] != expect:
        raise InvalidArgumentError(f"{path}: expected {expect.decode()} file, got {tokens[0]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    maxval = int(tokens[3]) if want == 4 else 1
    return tokens[0], w, h, maxval, data[i:]
