"""Closed-loop tracking episodes: render, perceive, decode, control, integrate."""

from __future__ import annotations

from dataclasses import dataclass
import csv
import io
import math

import numpy as np

from ..codec import DecodedPose, NoDetection, decode
from ..model import ModelGraph, OutputMaps, forward_batch
from .camera import MIN_RANGE, CameraModel, project
from .control import ControllerParams, ControllerState, controller_step
from .render import render_frame
from .trajectory import Trajectory

TAU = 0.15  # s, first-order velocity lag of the observer
DIVERGENCE_M = 3.0
TRACE_FIELDS = ("t", "obs_x", "obs_y", "obs_z", "tgt_x", "tgt_y", "tgt_z",
                "u", "v", "d", "err_x", "err_y", "err_z", "err_norm")


class OraclePerception:
    """Exact projection of the true relative pose; misses when out of view."""

    name = "oracle"

    def __call__(self, rel, led_on, cam, frame_seed):
        if rel[0] <= MIN_RANGE:
            return NoDetection()
        u, v, d = project(rel, cam)
        if not cam.in_frame(u, v):
            return NoDetection()
        return DecodedPose(u, v, d, float(led_on), 1.0)


class ModelPerception:
    """Render the frame and run a float or int8 model on it."""

    name = "model"

    def __init__(self, model):
        self.model = model

    def maps(self, pixels: np.ndarray) -> OutputMaps:
        if isinstance(self.model, ModelGraph):
            x = pixels.astype(np.float32)[None, None] / 255.0
            return OutputMaps.from_tensor(forward_batch(self.model, x)[0])
        from ..quant import int8_forward
        return int8_forward(self.model, pixels)

    def __call__(self, rel, led_on, cam, frame_seed):
        pixels, _ = render_frame(rel, led_on, cam, frame_seed)
        return decode(self.maps(pixels))


@dataclass
class EpisodeReport:
    avg_abs_error: np.ndarray  # per axis, m
    avg_error_norm: float
    std_error_norm: float
    completed: bool
    steps: int
    window_start: int
    detections: int
    trace: np.ndarray  # rows of TRACE_FIELDS

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in self.trace:
            w.writerow([f"{x:.6f}" if np.isfinite(x) else "nan" for x in row])
        return buf.getvalue()

    def summary(self) -> dict:
        ex, ey, ez = (float(e) for e in self.avg_abs_error)
        return {"completed": self.completed, "steps": self.steps, "err_x": ex, "err_y": ey,
                "err_z": ez, "err_norm": self.avg_error_norm, "std_err_norm": self.std_error_norm,
                "detections": self.detections}


def frame_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def run_episode(trajectory: Trajectory, perception=None, seed: int = 0,
                cam: CameraModel = CameraModel(), params: ControllerParams = ControllerParams(),
                tau: float = TAU, window_start_s: float = 0.0, led_on: bool = True,
                divergence_m: float = DIVERGENCE_M) -> EpisodeReport:
    """Fly the observer against ``trajectory``; errors are ``p - p_d`` before each update.

    The observer starts at the desired pose behind the first target
    sample. An episode aborts (``completed=False``) once ``|p - p_d|``
    exceeds ``divergence_m``.
    """
    perception = perception or OraclePerception()
    dt = trajectory.dt
    standoff = np.asarray(params.standoff, float)
    observer = trajectory.positions[0] - standoff
    velocity = np.zeros(3)
    state = ControllerState()
    lag = 1.0 - math.exp(-dt / tau)
    rows = []
    completed = True
    detections = 0
    for k, target in enumerate(trajectory.positions):
        desired = target - standoff
        err = observer - desired
        rel = target - observer
        decoded = perception(rel, led_on, cam, frame_seed(seed, k))
        if isinstance(decoded, DecodedPose):
            detections += 1
            uvd = (decoded.u_hat, decoded.v_hat, decoded.d_hat)
        else:
            uvd = (math.nan,) * 3
        rows.append((trajectory.t[k], *observer, *target, *uvd, *err, np.linalg.norm(err)))
        if np.linalg.norm(err) > divergence_m:
            completed = False
            break
        cmd = controller_step(state, decoded, cam, observer, dt, params)
        velocity = velocity + (cmd - velocity) * lag
        observer = observer + velocity * dt
    trace = np.array(rows, dtype=np.float64)
    start = min(int(round(window_start_s / dt)), len(trace) - 1)
    window = trace[start:]
    errs = window[:, 10:13]
    norms = window[:, 13]
    return EpisodeReport(np.mean(np.abs(errs), axis=0), float(norms.mean()), float(norms.std()),
                         completed, len(trace), start, detections, trace)


def trajectory_svg(report: EpisodeReport, path=None) -> str:
    """Observer vs desired position per axis over time, as SVG text."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    tr = report.trace
    fig, axes = plt.subplots(3, 1, figsize=(7, 6), sharex=True)
    for k, (ax, name) in enumerate(zip(axes, "xyz")):
        desired = tr[:, 4 + k] - (0.8 if k == 0 else 0.0)
        ax.plot(tr[:, 0], desired, color="gray", lw=2, label="desired")
        ax.plot(tr[:, 0], tr[:, 1 + k], color="#5b4b9a", lw=1, label="observer")
        ax.set_ylabel(f"{name} [m]")
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    svg = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
