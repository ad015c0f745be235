"""Random rendered frames for training and evaluation."""

from __future__ import annotations

import numpy as np

from .camera import CameraModel, back_project
from .render import render_frame

DEPTH_RANGE = (0.4, 2.0)
# keep the projected center this far from the image border
MARGIN_PX = 6.0


def sample_relative_pose(rng: np.random.Generator, cam: CameraModel = CameraModel(),
                         depth_range=DEPTH_RANGE) -> tuple[float, float, float]:
    d = rng.uniform(*depth_range)
    u = rng.uniform(MARGIN_PX, cam.width - MARGIN_PX)
    v = rng.uniform(MARGIN_PX, cam.height - MARGIN_PX)
    return back_project(u, v, d, cam)


def generate_samples(n: int, seed: int = 0, cam: CameraModel = CameraModel(),
                     depth_range=DEPTH_RANGE, led_prob: float = 0.5):
    """``n`` (uint8 image, Annotation) pairs; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, cam.height, cam.width), np.uint8)
    anns = []
    for k in range(n):
        rel = sample_relative_pose(rng, cam, depth_range)
        led = bool(rng.random() < led_prob)
        noise_seed = int(rng.integers(2**31))
        images[k], ann = render_frame(rel, led, cam, noise_seed)
        anns.append(ann)
    return images, anns
