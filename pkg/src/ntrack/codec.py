"""Ground-truth map synthesis and barycenter decoding of the 20x20 output maps.

Pixel ``k`` covers the continuous interval ``[k, k+1)``; map cell ``j``
covers pixels ``8j .. 8j+7`` and its center sits at ``8j + 4``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import OutputMaps

IMAGE_SIZE = 160
MAP_SIZE = 20
CELL = IMAGE_SIZE // MAP_SIZE
RADIUS = 4.0
MIN_MASS = 1e-3


@dataclass(frozen=True)
class Annotation:
    u: float
    v: float
    d: float
    led_on: bool
    rel_pose: tuple[float, float, float] | None = None
    visible: bool = True

    def validate(self, size: int = IMAGE_SIZE) -> None:
        if not self.visible:
            return
        if not (0 <= self.u < size and 0 <= self.v < size):
            raise ValueError(f"annotation (u={self.u}, v={self.v}) outside the {size}x{size} image")
        if not self.d > 0:
            raise ValueError(f"annotation depth must be positive, got d={self.d}")


@dataclass(frozen=True)
class DecodedPose:
    u_hat: float
    v_hat: float
    d_hat: float
    p_led: float
    confidence: float

    @property
    def detected(self) -> bool:
        return True


@dataclass(frozen=True)
class NoDetection:
    confidence: float = 0.0

    @property
    def detected(self) -> bool:
        return False


def soft_disc(u: float, v: float, size: int = IMAGE_SIZE, radius: float = RADIUS) -> np.ndarray:
    """Cone of height 1 around (u, v) falling linearly to 0 at ``radius``.

    Rescaled so the largest pixel is exactly 1. The linear edge keeps the
    max-pooled barycenter within 0.5 px of (u, v) anywhere in the image.
    """
    centers = np.arange(size) + 0.5
    r = np.hypot(centers[None, :] - u, centers[:, None] - v)
    disc = np.clip(1.0 - r / radius, 0.0, None)
    peak = disc.max()
    return disc / peak if peak > 0 else disc


def max_pool(m: np.ndarray, k: int = CELL) -> np.ndarray:
    h, w = m.shape
    return m.reshape(h // k, k, w // k, k).max(axis=(1, 3))


def synth_gt_maps(ann: Annotation) -> OutputMaps:
    """Ground-truth maps for one annotation; all-zero when the target is not visible."""
    if not ann.visible:
        z = np.zeros((MAP_SIZE, MAP_SIZE))
        return OutputMaps(z, z.copy(), z.copy())
    ann.validate()
    disc = soft_disc(ann.u, ann.v)
    position = max_pool(disc)
    led = position * (1.0 if ann.led_on else 0.0)
    # flat top over the disc support: every cell carrying position mass reads exactly d
    depth = max_pool(np.where(disc > 0, ann.d, 0.0))
    return OutputMaps(led, depth, position)


def _check_map(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (MAP_SIZE, MAP_SIZE):
        raise ValueError(f"{name} must be {MAP_SIZE}x{MAP_SIZE}, got {m.shape}")
    return m


def decode_position(position_map: np.ndarray, min_mass: float = MIN_MASS):
    """Barycenter of the map in image pixels, or ``None`` when there is no mass."""
    pos = _check_map(position_map, "position map")
    mass = pos.sum()
    if mass < min_mass:
        return None
    centers = CELL * np.arange(MAP_SIZE) + CELL / 2
    u = float(pos.sum(axis=0) @ centers / mass)
    v = float(pos.sum(axis=1) @ centers / mass)
    return u, v


def weighted_by_position(position_map: np.ndarray, value_map: np.ndarray,
                         min_mass: float = MIN_MASS):
    pos = _check_map(position_map, "position map")
    val = _check_map(value_map, "value map")
    mass = pos.sum()
    if mass < min_mass:
        return None
    return float((pos * val).sum() / mass)


def decode_depth(position_map: np.ndarray, depth_map: np.ndarray, min_mass: float = MIN_MASS):
    return weighted_by_position(position_map, depth_map, min_mass)


def decode_led(position_map: np.ndarray, led_map: np.ndarray, min_mass: float = MIN_MASS):
    return weighted_by_position(position_map, led_map, min_mass)


def decode(maps: OutputMaps, min_mass: float = MIN_MASS) -> DecodedPose | NoDetection:
    pos = np.asarray(maps.position_map, dtype=np.float64)
    uv = decode_position(pos, min_mass)
    if uv is None:
        return NoDetection(float(max(pos.sum(), 0.0)))
    return DecodedPose(uv[0], uv[1], decode_depth(pos, maps.depth_map, min_mass),
                       decode_led(pos, maps.led_map, min_mass), float(pos.sum()))
