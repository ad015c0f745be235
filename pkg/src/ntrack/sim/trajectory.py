"""Target trajectories sampled at constant speed.

Every path is parameterized by arc length ``s``. Sampling walks the path
so that consecutive samples are exactly ``speed * dt`` apart in space
(chord length), which keeps the per-step displacement constant even
across the corners of composite paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import brentq

DT = 1.0 / 39.0
AXES = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


class Path:
    length: float = math.inf

    def point(self, s: float) -> np.ndarray:
        raise NotImplementedError


@dataclass
class Line(Path):
    start: np.ndarray
    direction: np.ndarray
    length: float

    def __post_init__(self):
        self.start = np.asarray(self.start, float)
        d = np.asarray(self.direction, float)
        self.direction = d / np.linalg.norm(d)

    def point(self, s):
        return self.start + s * self.direction


@dataclass
class Circle(Path):
    """Full circle starting at ``center + radius * e1`` and turning toward ``e2``."""

    center: np.ndarray
    radius: float
    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.length = 2 * math.pi * self.radius

    def point(self, s):
        a = s / self.radius
        return self.center + self.radius * (math.cos(a) * np.asarray(self.e1, float)
                                            + math.sin(a) * np.asarray(self.e2, float))


@dataclass
class Helix(Path):
    """Rising spiral around a vertical axis through ``center``."""

    center: np.ndarray
    radius: float
    pitch: float  # rise per turn
    turns: float = math.inf

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self._k = math.hypot(self.radius, self.pitch / (2 * math.pi))
        self.length = self.turns * 2 * math.pi * self._k

    def point(self, s):
        a = s / self._k
        return self.center + np.array([self.radius * math.cos(a), self.radius * math.sin(a),
                                       self.pitch * a / (2 * math.pi)])


@dataclass
class Chain(Path):
    """Segments placed end to end, optionally repeated forever."""

    segments: list[Path]
    repeat: bool = False

    def __post_init__(self):
        self._ends = np.cumsum([seg.length for seg in self.segments])
        self._period = float(self._ends[-1])
        if not self._period > 0:
            raise ValueError("composite path has zero length")
        closing = self.segments[-1].point(self.segments[-1].length) - self.segments[0].point(0.0)
        if self.repeat and np.linalg.norm(closing) > 1e-9:
            raise ValueError("only closed composites can repeat")
        self.length = math.inf if self.repeat else self._period

    def point(self, s):
        if self.repeat:
            s = s % self._period
        k = int(np.searchsorted(self._ends, s, side="right"))
        k = min(k, len(self.segments) - 1)
        start = self._ends[k - 1] if k else 0.0
        return self.segments[k].point(min(s - start, self.segments[k].length))


@dataclass
class TrajectorySpec:
    kind: str  # spiral | linear | circle | composite
    speed: float
    duration: float | None = None
    radius: float = 0.5
    pitch: float = 0.3
    axis: str = "x"
    length: float = 1.0
    start: tuple[float, float, float] = (0.0, 0.0, 1.0)
    segments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if self.kind not in ("spiral", "linear", "circle", "composite"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")


@dataclass
class Trajectory:
    t: np.ndarray
    positions: np.ndarray
    dt: float
    speed: float
    duration: float  # nominal: path length / speed, or the requested duration

    def __len__(self):
        return len(self.t)


def endurance_segments(start, span: float = 0.3, radius: float = 0.25) -> list[Path]:
    """Out-and-back moves along x, y and z, then one circle in each coordinate plane."""
    start = np.asarray(start, float)
    segs: list[Path] = []
    for axis in "xyz":
        d = AXES[axis]
        segs += [Line(start, d, span), Line(start + span * d, -d, 2 * span),
                 Line(start - span * d, d, span)]
    for a, b in (("x", "y"), ("x", "z"), ("y", "z")):
        e1, e2 = AXES[a], AXES[b]
        segs.append(Circle(start - radius * e1, radius, e1, e2))
    return segs


def build_path(spec: TrajectorySpec) -> Path:
    start = np.asarray(spec.start, float)
    if spec.kind == "linear":
        if not spec.length > 0:
            raise ValueError("zero-length path")
        return Line(start, AXES[spec.axis] if isinstance(spec.axis, str) else spec.axis,
                    spec.length)
    if spec.kind == "circle":
        if not spec.radius > 0:
            raise ValueError("zero-length path")
        return Circle(start - np.array([0, spec.radius, 0]), spec.radius,
                      AXES["y"], AXES["z"])
    if spec.kind == "spiral":
        if not spec.radius > 0:
            raise ValueError("zero-length path")
        return Helix(start - np.array([spec.radius, 0, 0]), spec.radius, spec.pitch)
    segs = spec.segments or endurance_segments(start)
    return Chain(segs, repeat=True)


def _next_arclength(path: Path, s: float, p: np.ndarray, h: float) -> float | None:
    """Smallest s' > s with |path(s') - p| = h, or None past the end of the path."""
    def gap(x):
        return float(np.linalg.norm(path.point(x) - p)) - h

    lo = s
    hi = s + h
    while gap(hi) < 0:
        if hi >= path.length:
            return None
        lo = hi
        hi = min(hi + 0.25 * h, path.length)
    if hi > path.length:
        return None
    if gap(hi) == 0:
        return hi
    return brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def make_trajectory(spec: TrajectorySpec, dt: float = DT) -> Trajectory:
    """Sample the target path at ``dt`` with ``|p[k+1] - p[k]| = speed * dt``.

    Runs for ``spec.duration`` seconds, or to the end of a finite path when
    no duration is given.
    """
    path = build_path(spec)
    h = spec.speed * dt
    if spec.duration is None:
        if math.isinf(path.length):
            raise ValueError(f"{spec.kind} path is unbounded; give a duration")
        n_max = math.inf
    else:
        n_max = int(math.floor(spec.duration / dt + 1e-9))
    s = 0.0
    p = path.point(0.0)
    pts = [p]
    while len(pts) <= n_max:
        s_next = _next_arclength(path, s, p, h)
        if s_next is None:
            break
        s, p = s_next, path.point(s_next)
        pts.append(p)
    pts = np.array(pts)
    duration = path.length / spec.speed if spec.duration is None else spec.duration
    return Trajectory(np.arange(len(pts)) * dt, pts, dt, spec.speed, duration)
