"""On-disk formats: binary depth frames, JSON-lines records, pose files.

Depth frame format (DPT1):

    bytes 0..3    magic "DPT1"
    bytes 4..7    width,  little-endian uint32
    bytes 8..11   height, little-endian uint32
    then width*height little-endian float32 depths, row-major, meters
    (non-finite or <= 0 marks an invalid pixel)

The file size must be exactly 12 + 4*width*height bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputDataError
from .geometry import DepthMap, Detection2D, RigidTransform
from .tracking import Track

DEPTH_MAGIC = b"DPT1"
DEPTH_HEADER = struct.Struct("<4sII")


def write_depth(path: str | Path, depth_map: DepthMap) -> None:
    payload = depth_map.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(DEPTH_HEADER.pack(DEPTH_MAGIC, depth_map.width, depth_map.height))
        fh.write(payload)


def read_depth(path: str | Path) -> DepthMap:
    data = Path(path).read_bytes()
    if len(data) < DEPTH_HEADER.size:
        raise InputDataError(f"{path}: too short for a depth header ({len(data)} bytes)")
    magic, width, height = DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise InputDataError(f"{path}: bad magic {magic!r}, expected {DEPTH_MAGIC!r}")
    expected = DEPTH_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise InputDataError(
            f"{path}: expected {expected} bytes for {width}x{height}, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=DEPTH_HEADER.size)
    return DepthMap(width, height, values.reshape(height, width).copy())


def detection_to_record(d: Detection2D) -> dict:
    return {
        "frame": d.frame_index,
        "t": d.timestamp,
        "camera_id": d.camera_id,
        "class_id": d.class_id,
        "conf": d.confidence,
        "bbox": [d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]],
    }


def detection_from_record(rec: dict) -> Detection2D:
    bbox = rec["bbox"]
    return Detection2D(
        bbox=(float(bbox[0]), float(bbox[1]), float(bbox[2]), float(bbox[3])),
        class_id=int(rec["class_id"]),
        confidence=float(rec["conf"]),
        camera_id=int(rec["camera_id"]),
        frame_index=int(rec["frame"]),
        timestamp=float(rec["t"]),
    )


def write_detections(path: str | Path, detections: list[Detection2D]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in detections:
            fh.write(json.dumps(detection_to_record(d)) + "\n")


def read_detections(path: str | Path) -> list[Detection2D]:
    """Parse a per-camera detection file; timestamps must not decrease."""
    out: list[Detection2D] = []
    last_t = None
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            det = detection_from_record(rec)
        except (KeyError, ValueError, TypeError) as exc:
            raise InputDataError(f"{path}:{n}: bad detection record: {exc}") from exc
        if last_t is not None and det.timestamp < last_t:
            raise InputDataError(
                f"{path}:{n}: timestamp {det.timestamp} decreases (last {last_t})"
            )
        last_t = det.timestamp
        out.append(det)
    return out


def write_frame_index(path: str | Path, entries: list[dict]) -> None:
    """Per-camera frame index: {"frame": i, "t": seconds, "depth": filename}."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")


def read_frame_index(path: str | Path) -> list[dict]:
    entries = []
    last_t = None
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entry = {"frame": int(rec["frame"]), "t": float(rec["t"]),
                     "depth": str(rec["depth"])}
        except (KeyError, ValueError, TypeError) as exc:
            raise InputDataError(f"{path}:{n}: bad frame index record: {exc}") from exc
        if last_t is not None and entry["t"] < last_t:
            raise InputDataError(f"{path}:{n}: frame timestamps decrease")
        last_t = entry["t"]
        entries.append(entry)
    return entries


def transform_to_record(t: RigidTransform) -> dict:
    return {
        "rotation": [float(v) for v in t.rotation.reshape(-1)],
        "translation": [float(v) for v in t.translation],
    }


def transform_from_record(rec: dict) -> RigidTransform:
    rot = np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3)
    trans = np.asarray(rec["translation"], dtype=np.float64).reshape(3)
    return RigidTransform(rot, trans)


def write_pose(path: str | Path, transform: RigidTransform,
               rms_residual: float | None = None, extra: dict | None = None) -> None:
    doc = transform_to_record(transform)
    if rms_residual is not None:
        doc["rms_residual"] = rms_residual
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_pose(path: str | Path) -> tuple[RigidTransform, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        transform = transform_from_record(doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputDataError(f"{path}: bad pose file: {exc}") from exc
    meta = {k: v for k, v in doc.items() if k not in ("rotation", "translation")}
    return transform, meta


def track_to_record(t_snapshot: float, track: Track) -> dict:
    return {
        "t": t_snapshot,
        "id": track.id,
        "class_id": track.class_id,
        "status": track.status.value,
        "pos": [track.position.x, track.position.y, track.position.z],
        "vel": [track.velocity.x, track.velocity.y, track.velocity.z],
        "hits": track.hits,
        "misses": track.misses,
    }


def read_track_records(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines()
            if line.strip()]
