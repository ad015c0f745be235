"""Observer controller: hold a fixed standoff in front of the target.

The camera x axis is aligned with world x, so the observer-frame estimate
of the target is also its world-frame offset from the observer. The
command is a proportional term on the standoff error plus a feedforward of
the target's velocity, estimated with an alpha-beta tracker on the
target's world position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import DecodedPose
from .camera import MIN_RANGE, CameraModel, back_project

STANDOFF = np.array([0.8, 0.0, 0.0])


@dataclass
class ControllerParams:
    gain: float = 1.2  # 1/s
    max_speed: float = 1.0  # per axis, m/s
    hold_decay: float = 0.9
    feedforward: bool = True
    alpha: float = 0.5
    beta: float = 0.05
    standoff: np.ndarray = field(default_factory=lambda: STANDOFF.copy())


@dataclass
class ControllerState:
    last_command: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_pos: np.ndarray | None = None  # tracked target, world frame
    target_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_estimate: np.ndarray | None = None  # last relative estimate


def relative_estimate(decoded, cam: CameraModel):
    """Back-projected observer-frame target position, or None for no detection."""
    if not isinstance(decoded, DecodedPose) or decoded.d_hat is None or decoded.d_hat <= MIN_RANGE:
        return None
    return np.array(back_project(decoded.u_hat, decoded.v_hat, decoded.d_hat, cam))


def controller_step(state: ControllerState, decoded, cam: CameraModel = CameraModel(),
                    observer_pos=None, dt: float = 1.0 / 39.0,
                    params: ControllerParams = ControllerParams()) -> np.ndarray:
    """Velocity command (vx, vy, vz) for this perception result; updates ``state``.

    ``observer_pos`` (world, from odometry) feeds the target-velocity tracker;
    without it the controller is purely proportional.
    """
    rel = relative_estimate(decoded, cam)
    ff = np.zeros(3)
    if rel is None:
        if state.target_pos is not None:
            state.target_pos = state.target_pos + state.target_vel * dt
        cmd = state.last_command * params.hold_decay
        state.last_command = cmd
        return cmd.copy()
    if params.feedforward and observer_pos is not None:
        measured = np.asarray(observer_pos, float) + rel
        if state.target_pos is None:
            state.target_pos = measured
        else:
            predicted = state.target_pos + state.target_vel * dt
            resid = measured - predicted
            state.target_pos = predicted + params.alpha * resid
            state.target_vel = state.target_vel + params.beta / dt * resid
            ff = state.target_vel
    state.last_estimate = rel
    cmd = np.clip(params.gain * (rel - params.standoff) + ff, -params.max_speed, params.max_speed)
    state.last_command = cmd
    return cmd.copy()
