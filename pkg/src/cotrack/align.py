"""World alignment of the device tracking space, and drift correction.

The device reports camera poses in its own tracking frame; the mocap
pipeline yields the eye pose in the shared world frame.  Placing the
tracking-space origin at

    origin = eye_world o inverse(cam_local)

makes the rendered camera coincide with the eye.  The full solve copies
any pitch/roll discrepancy between the two measurements into the
origin, which tilts the whole tracking space (a horizontal step then
gains a vertical component: the user walks toward the virtual floor).
The leveled solve therefore constrains the origin rotation to pure yaw;
position and heading still match exactly, and world-up maps to world-up
by construction.

Residual monitoring compares the currently rendered camera pose with
the mocap-derived eye pose; sustained violations trigger either a snap
or a smooth re-alignment.  The caller is responsible for pairing poses
that describe the same instant (the mocap stream arrives late, so pair
the camera pose recorded at the mocap sample's capture time; see the
simulation runner).
"""

from dataclasses import dataclass, replace

import numpy as np

from .calib import Extrinsics
from .geom import (
    Pose,
    compose,
    inverse,
    quat_from_yaw,
    quat_rotate,
    slerp,
    wrap_angle,
    yaw_of,
)

COMPLETION_EPS = 1e-9


@dataclass(frozen=True)
class Residual:
    """Alignment error between rendered camera and mocap-derived eye."""

    position_error: float
    yaw_error: float


@dataclass(frozen=True)
class CorrectionConfig:
    position_threshold: float = 0.03
    yaw_threshold: float = np.radians(5.0)
    sustain_frames: int = 30
    mode: str = "snap"
    smooth_duration: float = 0.5

    def __post_init__(self):
        if self.position_threshold <= 0 or self.yaw_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.sustain_frames < 1:
            raise ValueError("sustain_frames must be at least 1")
        if self.mode not in ("snap", "smooth"):
            raise ValueError(f"unknown correction mode {self.mode!r}")
        if self.smooth_duration <= 0:
            raise ValueError("smooth_duration must be positive")


@dataclass(frozen=True)
class AlignmentState:
    """Tracking-space origin plus the correction state machine around it.

    phase is "monitoring" or "correcting"; progress is the completed
    fraction of a smooth correction (0 while monitoring).
    """

    origin: Pose
    phase: str = "monitoring"
    progress: float = 0.0
    consecutive_violations: int = 0
    last_residual: Residual | None = None
    correction_start: Pose | None = None


def _extrinsic_pose(extrinsics) -> Pose:
    if isinstance(extrinsics, Extrinsics):
        return extrinsics.transform
    return extrinsics


def eye_world(mocap: Pose, extrinsics) -> Pose:
    """Eye pose in the world frame from a mocap body pose and extrinsics."""
    return compose(mocap, _extrinsic_pose(extrinsics))


def solve_origin_full(eye_w: Pose, cam_local: Pose) -> Pose:
    """Origin that maps the device camera pose exactly onto the eye pose.

    Inherits the full relative rotation, pitch and roll included; see
    solve_origin_leveled for the floor-safe variant.
    """
    return compose(eye_w, inverse(cam_local))


def solve_origin_leveled(eye_w: Pose, cam_local: Pose) -> Pose:
    """Origin constrained to a pure yaw rotation.

    The composed camera matches the eye exactly in position and in yaw;
    pitch/roll discrepancies are dropped instead of being baked into
    the tracking space, so world-up maps to world-up exactly.
    Raises UndefinedYawError when either pose faces straight up/down.
    """
    dyaw = np.asarray(yaw_of(eye_w.q)) - np.asarray(yaw_of(cam_local.q))
    q = quat_from_yaw(dyaw)
    t = eye_w.t - quat_rotate(q, cam_local.t)
    return Pose(q, t)


def drift_residual(cam_world: Pose, eye_w: Pose) -> Residual:
    """Leveled residual: position distance and signed wrapped yaw difference.

    Pitch/roll differences do not contribute, matching what the leveled
    origin can correct.
    """
    pos_err = float(np.linalg.norm(cam_world.t - eye_w.t))
    yaw_err = float(wrap_angle(yaw_of(cam_world.q) - yaw_of(eye_w.q)))
    return Residual(pos_err, yaw_err)


def _exceeds(residual: Residual, cfg: CorrectionConfig) -> bool:
    return (
        residual.position_error > cfg.position_threshold
        or abs(residual.yaw_error) > cfg.yaw_threshold
    )


def _interpolate(start: Pose, target: Pose, s: float) -> Pose:
    q = slerp(start.q, target.q, s)
    t = start.t + s * (target.t - start.t)
    return Pose(q, t)


def correction_step(
    state: AlignmentState,
    residual: Residual,
    target_origin: Pose,
    cfg: CorrectionConfig,
    dt: float,
) -> AlignmentState:
    """Advance the correction state machine by one frame.

    Monitoring: consecutive_violations counts frames whose residual
    exceeds either threshold (any compliant frame resets it); reaching
    sustain_frames enters the correcting phase with the current origin
    frozen as the interpolation start.  Correcting: snap mode adopts
    target_origin in a single step; smooth mode moves linearly in
    position and spherically in yaw over smooth_duration seconds.
    Either way the machine returns to monitoring with the counter
    cleared.  A single-frame spike never triggers when sustain_frames
    is greater than 1.
    """
    if state.phase == "monitoring":
        violations = state.consecutive_violations + 1 if _exceeds(residual, cfg) else 0
        if violations >= cfg.sustain_frames:
            return replace(
                state,
                phase="correcting",
                progress=0.0,
                consecutive_violations=violations,
                last_residual=residual,
                correction_start=state.origin,
            )
        return replace(state, consecutive_violations=violations, last_residual=residual)

    if cfg.mode == "snap":
        return AlignmentState(origin=target_origin, last_residual=residual)
    progress = state.progress + dt / cfg.smooth_duration
    if progress >= 1.0 - COMPLETION_EPS:
        return AlignmentState(origin=target_origin, last_residual=residual)
    origin = _interpolate(state.correction_start, target_origin, progress)
    return replace(state, origin=origin, progress=progress, last_residual=residual)
