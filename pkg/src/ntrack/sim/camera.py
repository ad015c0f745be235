"""Pinhole camera for the forward-looking observer.

Camera frame: x forward (optical axis), y left, z up. Image u grows to the
right and v grows downwards, so a target on the left (y > 0) has u < cx.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

MIN_RANGE = 0.05
# 80 px / tan(32.5 deg): a 65 deg horizontal field of view on 160 px
DEFAULT_FOCAL_PX = 126.0


@dataclass(frozen=True)
class CameraModel:
    focal_px: float = DEFAULT_FOCAL_PX
    cx: float = 80.0
    cy: float = 80.0
    width: int = 160
    height: int = 160

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError(f"focal length must be positive, got {self.focal_px}")

    def in_frame(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


def project(target_rel, cam: CameraModel = CameraModel()) -> tuple[float, float, float]:
    """Observer-frame point (x, y, z) -> (u, v, d) with d the forward range."""
    x, y, z = (float(c) for c in target_rel)
    if x <= MIN_RANGE:
        raise ValueError(f"point at x={x:.3f} m is behind or too close to the camera")
    return cam.cx + cam.focal_px * (-y) / x, cam.cy + cam.focal_px * (-z) / x, x


def back_project(u: float, v: float, d: float, cam: CameraModel = CameraModel()):
    if d <= MIN_RANGE:
        raise ValueError(f"range d={d:.3f} m is behind or too close to the camera")
    return d, -(u - cam.cx) * d / cam.focal_px, -(v - cam.cy) * d / cam.focal_px


def fov_deg(cam: CameraModel) -> float:
    return math.degrees(2 * math.atan(cam.width / 2 / cam.focal_px))
