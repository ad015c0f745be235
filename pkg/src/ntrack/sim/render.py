"""Synthetic grayscale frames of a target drone seen by the observer camera."""

from __future__ import annotations

import numpy as np

from ..codec import Annotation
from .camera import MIN_RANGE, CameraModel, project

DRONE_DIAMETER_M = 0.10
LED_SIZE_PX = 2
TARGET_LEVEL = 0.08
LED_LEVEL = 1.0


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly interpolated lattice noise in [0, 1] with ``cells`` lattice cells per side."""
    lattice = rng.random((cells + 1, cells + 1))
    t = (np.arange(size) + 0.5) * cells / size
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = lattice[i] * (1 - f)[:, None] + lattice[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def background(rng: np.random.Generator, size: int = 160) -> np.ndarray:
    coarse = value_noise(rng, size, 4)
    fine = value_noise(rng, size, 16)
    return 0.3 + 0.45 * coarse + 0.15 * fine


def led_center(u: float, v: float, diameter_px: float) -> tuple[float, float]:
    # LED sits on the top side of the frame, above the body center
    return u, v - 0.25 * diameter_px


def led_box(u: float, v: float, diameter_px: float, size: int = 160):
    """Pixel slices of the 2x2 LED dot, clipped to the image (may be empty)."""
    lu, lv = led_center(u, v, diameter_px)
    c0 = int(np.floor(lu - LED_SIZE_PX / 2 + 0.5))
    r0 = int(np.floor(lv - LED_SIZE_PX / 2 + 0.5))
    rows = slice(max(r0, 0), min(max(r0 + LED_SIZE_PX, 0), size))
    cols = slice(max(c0, 0), min(max(c0 + LED_SIZE_PX, 0), size))
    return rows, cols


def render_frame(target_rel, led_on: bool, cam: CameraModel = CameraModel(),
                 noise_seed: int = 0) -> tuple[np.ndarray, Annotation]:
    """Render one uint8 frame and return it with the exact annotation used.

    A target behind the camera or projecting outside the image yields a
    background-only frame and an annotation with ``visible=False``.
    """
    rng = np.random.default_rng(noise_seed)
    size = cam.width
    img = background(rng, size)
    sensor = rng.normal(0.0, 0.015, (size, size))
    x, y, z = (float(c) for c in target_rel)
    if x <= MIN_RANGE:
        ann = Annotation(float("nan"), float("nan"), x, bool(led_on), (x, y, z), visible=False)
        return _to_uint8(img + sensor), ann
    u, v, d = project((x, y, z), cam)
    ann = Annotation(u, v, d, bool(led_on), (x, y, z), visible=cam.in_frame(u, v))

    diameter = cam.focal_px * DRONE_DIAMETER_M / d
    centers = np.arange(size) + 0.5
    r = np.hypot(centers[None, :] - u, centers[:, None] - v)
    alpha = np.clip(diameter / 2 - r + 0.5, 0.0, 1.0)
    img = img * (1 - alpha) + TARGET_LEVEL * alpha
    if led_on:
        rows, cols = led_box(u, v, diameter, size)
        img[rows, cols] = LED_LEVEL
    return _to_uint8(img + sensor), ann


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
