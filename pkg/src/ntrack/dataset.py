"""On-disk dataset: ``annotations.jsonl`` plus 8-bit binary PGM frames under ``images/``.

One JSON object per line::

    {"frame": 12, "u": 81.3, "v": 77.0, "d": 0.82, "led": true, "pose": [0.82, -0.01, 0.02]}

Frame ``12`` lives at ``images/000012.pgm``. Prediction files use the same
schema with ``led`` holding a probability.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .codec import IMAGE_SIZE, Annotation

log = logging.getLogger(__name__)

ANNOTATIONS = "annotations.jsonl"
IMAGES = "images"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    frame: int
    image_path: Path
    annotation: Annotation

    def load_image(self) -> np.ndarray:
        return read_pgm(self.image_path)


def image_name(frame: int) -> str:
    return f"{frame:06d}.pgm"


def read_pgm(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise DatasetError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
        arr = np.array(im, dtype=np.uint8)
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise DatasetError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {arr.shape}")
    return arr


def write_pgm(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PPM")


def annotation_to_json(frame: int, ann: Annotation, led=None) -> dict:
    rec = {"frame": int(frame), "u": float(ann.u), "v": float(ann.v), "d": float(ann.d),
           "led": bool(ann.led_on) if led is None else led}
    if ann.rel_pose is not None:
        rec["pose"] = [float(c) for c in ann.rel_pose]
    return rec


def parse_line(line: str, lineno: int, source) -> tuple[int, Annotation, object]:
    try:
        obj = json.loads(line)
        frame = int(obj["frame"])
        u, v, d = float(obj["u"]), float(obj["v"]), float(obj["d"])
        led = obj["led"]
        pose = obj.get("pose")
        if pose is not None:
            pose = tuple(float(c) for c in pose)
            if len(pose) != 3:
                raise ValueError("pose must have three components")
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{source}:{lineno}: cannot parse record ({exc})") from exc
    ann = Annotation(u, v, d, bool(led), pose)
    try:
        ann.validate()
    except ValueError as exc:
        raise DatasetError(f"{source}:{lineno}: {exc}") from exc
    return frame, ann, led


def write_dataset(root, samples) -> Path:
    """Write ``(frame, uint8 image, Annotation)`` triples; returns the annotations path."""
    root = Path(root)
    (root / IMAGES).mkdir(parents=True, exist_ok=True)
    path = root / ANNOTATIONS
    with open(path, "w") as fh:
        for frame, pixels, ann in samples:
            ann.validate()
            write_pgm(root / IMAGES / image_name(frame), pixels)
            fh.write(json.dumps(annotation_to_json(frame, ann)) + "\n")
    return path


def load_dataset(root) -> Iterator[DatasetRecord]:
    """Yield validated records in file order; errors name the offending line."""
    root = Path(root)
    path = root / ANNOTATIONS
    if not path.exists():
        raise DatasetError(f"{root}: no {ANNOTATIONS}")
    empty = True
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            frame, ann, _ = parse_line(line, lineno, path)
            img = root / IMAGES / image_name(frame)
            if not img.exists():
                raise DatasetError(f"{path}:{lineno}: missing image {img}")
            empty = False
            yield DatasetRecord(frame, img, ann)
    if empty:
        log.warning("dataset %s is empty", root)


def load_predictions(path) -> dict[int, tuple[Annotation, float]]:
    """Prediction JSONL keyed by frame; the float is the LED probability."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                frame, ann, led = parse_line(line, lineno, path)
                out[frame] = (ann, float(led))
    return out


def load_arrays(root) -> tuple[np.ndarray, list[Annotation]]:
    """Whole dataset in memory: images as uint8 (N, 160, 160) plus annotations."""
    records = list(load_dataset(root))
    images = np.stack([r.load_image() for r in records]) if records else \
        np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), np.uint8)
    return images, [r.annotation for r in records]
