"""Regenerate the golden wire-protocol fixtures.

Run from the repo root:  python3 fixtures/protocol/generate_fixtures.py
The .bin files are consumed by both the Python tests and the frontend's
vitest suite; manifest.json records the decoded field values they assert.
"""
import json
import os

import numpy as np

from dare import protocol

HERE = os.path.dirname(os.path.abspath(__file__))


def checker(width, height):
    img = np.zeros((height, width), dtype=np.uint8)
    img[(np.indices((height, width)).sum(axis=0) % 2) == 0] = 255
    return img


def main():
    entries = {}

    hello = protocol.Hello(version=protocol.PROTOCOL_VERSION)
    entries["hello.bin"] = {
        "bytes": protocol.encode_hello(hello),
        "decoded": {"type": "hello", "version": hello.version},
    }

    ack = protocol.HelloAck(
        version=protocol.PROTOCOL_VERSION,
        volume_kind=protocol.VOLUME_KIND_DIRECTIONAL,
        origin=(-1.5, 0.0, 2.25),
        voxel_size=0.125,
        dims=(64, 32, 16),
        sample_count=123456,
    )
    entries["hello_ack.bin"] = {
        "bytes": protocol.encode_hello_ack(ack),
        "decoded": {
            "type": "hello_ack", "version": ack.version, "volume_kind": ack.volume_kind,
            "origin": list(ack.origin), "voxel_size": ack.voxel_size,
            "dims": list(ack.dims), "sample_count": ack.sample_count,
        },
    }

    req = protocol.ResliceRequest(
        request_id=42,
        pose=(1.5, -2.0, 3.25, 1.0, 0.0, 0.0, 0.0),
        width=8, height=8, pixel_pitch=(0.25, 0.5),
        encoding=protocol.ENCODING_RAW8,
    )
    entries["request_basic.bin"] = {
        "bytes": protocol.encode_reslice_request(req),
        "decoded": {
            "type": "reslice_request", "request_id": 42,
            "pose": list(req.pose), "width": 8, "height": 8,
            "pixel_pitch": [0.25, 0.5], "encoding": 0, "config": None,
        },
    }

    cfg = {
        "interp_radius": 0.25, "normal_threshold_deg": 30.0,
        "inplane_threshold_deg": 20.0, "k_normal": 8.0, "k_inplane": 4.0, "k_dist": 0.0,
    }
    req_cfg = protocol.ResliceRequest(
        request_id=43,
        pose=(0.0, 0.0, 10.0, 0.7071067811865476, 0.7071067811865476, 0.0, 0.0),
        width=128, height=96, pixel_pitch=(0.2, 0.2),
        encoding=protocol.ENCODING_ZLIB, config=cfg,
    )
    entries["request_config.bin"] = {
        "bytes": protocol.encode_reslice_request(req_cfg),
        "decoded": {
            "type": "reslice_request", "request_id": 43,
            "pose": list(req_cfg.pose), "width": 128, "height": 96,
            "pixel_pitch": [0.2, 0.2], "encoding": 1, "config": cfg,
        },
    }

    img = checker(8, 8)
    coverage = np.ones((8, 8), dtype=bool)
    resp = protocol.ResliceResponse(
        request_id=42, status=protocol.STATUS_OK, latency_ms=12.5,
        width=8, height=8, encoding=protocol.ENCODING_RAW8,
        image=protocol.encode_image_payload(img, protocol.ENCODING_RAW8),
        coverage=protocol.pack_coverage(coverage),
    )
    entries["response_checker.bin"] = {
        "bytes": protocol.encode_reslice_response(resp),
        "decoded": {
            "type": "reslice_response", "request_id": 42, "status": 0,
            "latency_ms": 12.5, "width": 8, "height": 8, "encoding": 0,
            "pixels": img.reshape(-1).tolist(),
            "coverage": coverage.reshape(-1).astype(int).tolist(),
        },
    }

    img2 = np.arange(16, dtype=np.uint8).reshape(4, 4)
    cov2 = np.eye(4, dtype=bool)
    resp2 = protocol.ResliceResponse(
        request_id=77, status=protocol.STATUS_OK, latency_ms=3.75,
        width=4, height=4, encoding=protocol.ENCODING_RAW8,
        image=protocol.encode_image_payload(img2, protocol.ENCODING_RAW8),
        coverage=protocol.pack_coverage(cov2),
    )
    entries["response_partial.bin"] = {
        "bytes": protocol.encode_reslice_response(resp2),
        "decoded": {
            "type": "reslice_response", "request_id": 77, "status": 0,
            "latency_ms": 3.75, "width": 4, "height": 4, "encoding": 0,
            "pixels": img2.reshape(-1).tolist(),
            "coverage": cov2.reshape(-1).astype(int).tolist(),
        },
    }

    superseded = protocol.ResliceResponse(
        request_id=7, status=protocol.STATUS_SUPERSEDED, latency_ms=0.5, superseded_by=9,
    )
    entries["response_superseded.bin"] = {
        "bytes": protocol.encode_reslice_response(superseded),
        "decoded": {
            "type": "reslice_response", "request_id": 7, "status": 1,
            "latency_ms": 0.5, "superseded_by": 9,
        },
    }

    error = protocol.ResliceResponse(
        request_id=3, status=protocol.STATUS_ERROR, latency_ms=0.25,
        message="pose.rotation is not a unit quaternion (norm 1.500000)",
    )
    entries["response_error.bin"] = {
        "bytes": protocol.encode_reslice_response(error),
        "decoded": {
            "type": "reslice_response", "request_id": 3, "status": 2,
            "latency_ms": 0.25,
            "message": "pose.rotation is not a unit quaternion (norm 1.500000)",
        },
    }

    manifest = {}
    for name, entry in entries.items():
        with open(os.path.join(HERE, name), "wb") as fh:
            fh.write(entry["bytes"])
        manifest[name] = entry["decoded"]
    with open(os.path.join(HERE, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(entries)} fixtures + manifest.json to {HERE}")


if __name__ == "__main__":
    main()
