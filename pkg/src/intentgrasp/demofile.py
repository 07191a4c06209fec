"""Line-delimited JSON demo files.

One trajectory per line.  Depth images are float32, zlib-compressed and
base64-encoded, with the H x W shape declared next to them.  Lines are
written with sorted keys so identical datasets produce identical bytes.
"""
from __future__ import annotations

import base64
import json
import zlib
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .trajseg import DemoTrajectory

DEMO_FORMAT = "intentgrasp-demos"
DEMO_VERSION = 1


class DemoFormatError(ValueError):
    pass


def encode_image(img: np.ndarray) -> str:
    raw = np.ascontiguousarray(img, dtype="<f4").tobytes()
    return base64.b64encode(zlib.compress(raw, 6)).decode("ascii")


def decode_image(text: str, shape) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(text))
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def as_float32_exact(img: np.ndarray) -> np.ndarray:
    """Round to float32 so in-memory images equal what a file round-trip returns."""
    return np.asarray(img, dtype=np.float32).astype(np.float64)


def trajectory_to_record(traj: DemoTrajectory) -> dict:
    h, w = traj.resolution
    return {
        "format": DEMO_FORMAT,
        "version": DEMO_VERSION,
        "poses": [[float(v) for v in row] for row in traj.poses],
        "image_shape": [int(h), int(w)],
        "images": [encode_image(img) for img in traj.images],
        "image_index": [int(i) for i in traj.image_index],
        "labels": None if traj.labels is None else [int(v) for v in traj.labels],
        "success": bool(traj.success),
        "meta": traj.meta,
    }


def record_to_trajectory(rec: dict) -> DemoTrajectory:
    if rec.get("format") != DEMO_FORMAT:
        raise DemoFormatError("record is not an intentgrasp demo")
    if rec.get("version") != DEMO_VERSION:
        raise DemoFormatError(f"unsupported demo version {rec.get('version')}")
    shape = tuple(rec["image_shape"])
    images = np.stack([decode_image(s, shape) for s in rec["images"]])
    return DemoTrajectory(
        poses=np.asarray(rec["poses"], dtype=np.float64),
        images=images,
        image_index=np.asarray(rec["image_index"], dtype=np.int64),
        labels=None if rec.get("labels") is None else np.asarray(rec["labels"], dtype=np.int64),
        success=bool(rec["success"]),
        meta=dict(rec.get("meta") or {}),
    )


def write_demos(path, trajectories: Iterable[DemoTrajectory]) -> int:
    count = 0
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for traj in trajectories:
            fh.write(json.dumps(trajectory_to_record(traj), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def iter_demos(path) -> Iterator[DemoTrajectory]:
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DemoFormatError(f"{path}:{lineno}: {exc}") from exc
            try:
                yield record_to_trajectory(rec)
            except (KeyError, ValueError) as exc:
                raise DemoFormatError(f"{path}:{lineno}: {exc}") from exc


def read_demos(path) -> list[DemoTrajectory]:
    return list(iter_demos(path))
