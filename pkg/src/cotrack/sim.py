"""Synthetic motion, tracker drift, and mocap observation models.

Everything here is deterministic given the config seeds.  The play
area is a 7 x 7 m square spanning [0, 7] on x and z, head height on y.
Walking motions keep the head level; heading turns are smoothed at a
constant rate over a fixed 0.5 s window centered on each turn event,
while positions follow the exact closed-form path (so path extents and
reversal times are exact).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import (
    Pose,
    quat_from_rotvec,
    quat_from_yaw,
    quat_mul,
    quat_normalize,
    quat_rotate,
    convert_quat,
    convert_vector,
)
from .trajectory import Trajectory

ROOM_SIZE = 7.0
ROOM_CENTER = (3.5, 3.5)
TURN_WINDOW = 0.5

# fistbump staging
APPROACH_WINDOW = 3.0
CONTACT_POINT = np.array([3.5, 1.25, 3.5])
CONTACT_GAP = 0.01
STANCE_DISTANCE = 0.35
CONTROLLER_OFFSET = np.array([0.25, -0.45, 0.30])

_KIND_EXTENTS = {"line": 4.0, "circle": 2.0, "patrol": 3.0, "fistbump": 4.0}


@dataclass(frozen=True)
class MotionSpec:
    """Scenario description for the motion generators.

    extent means: line length, circle radius, patrol square side, or
    fistbump loop scale.  Defaults fall back per kind when extent is
    None.
    """

    kind: str = "circle"
    extent: float | None = None
    speed: float = 1.0
    duration: float = 60.0
    rate: float = 100.0
    head_height: float = 1.7

    def resolved_extent(self) -> float:
        return _KIND_EXTENTS[self.kind] if self.extent is None else float(self.extent)


@dataclass(frozen=True)
class ContactEvent:
    t: float
    point: np.ndarray


@dataclass(frozen=True)
class UserMotion:
    head: Trajectory
    right_controller: Trajectory | None = None


@dataclass(frozen=True)
class MotionSet:
    users: list[UserMotion]
    contacts: list[ContactEvent] = field(default_factory=list)


def _validate_spec(spec: MotionSpec, users: int):
    if spec.kind not in _KIND_EXTENTS:
        raise ValueError(f"unknown motion kind {spec.kind!r}")
    if users < 1:
        raise ValueError("users must be at least 1")
    if spec.kind == "fistbump" and users != 2:
        raise ValueError("fistbump is a two-user scenario")
    if spec.speed <= 0 or spec.duration <= 0 or spec.rate <= 0:
        raise ValueError("speed, duration and rate must be positive")
    if spec.head_height <= 0:
        raise ValueError("head_height must be positive")
    ext = spec.resolved_extent()
    if ext <= 0:
        raise ValueError("extent must be positive")
    if spec.kind == "line":
        if ext > ROOM_SIZE:
            raise ValueError(f"line length {ext} m exceeds the {ROOM_SIZE} m room")
        if ext / spec.speed <= TURN_WINDOW:
            raise ValueError("line legs are shorter than the turn window")
        if users > 1 and 3.5 + 0.8 * (users - 1) > ROOM_SIZE:
            raise ValueError("too many lanes for the room")
    elif spec.kind == "circle":
        if ext > ROOM_SIZE / 2:
            raise ValueError(f"circle radius {ext} m exceeds the room half-size")
    elif spec.kind == "patrol":
        if ext > ROOM_SIZE:
            raise ValueError(f"patrol side {ext} m exceeds the {ROOM_SIZE} m room")
        if ext / spec.speed <= TURN_WINDOW:
            raise ValueError("patrol legs are shorter than the turn window")
    elif spec.kind == "fistbump":
        if ext > 6.0:
            raise ValueError("fistbump loop scale must be at most 6 m")
        if spec.duration / 5.0 <= 2.0 * APPROACH_WINDOW:
            raise ValueError("fistbump duration too short for 4 spaced contact events")


def _time_grid(spec: MotionSpec) -> np.ndarray:
    n = int(round(spec.duration * spec.rate)) + 1
    return np.arange(n) / spec.rate


def _heading_profile(dist, turn_dists, h0, step, window_dist):
    """Piecewise-linear unwrapped heading over distance.

    Constant h0 before the first turn; each turn at turn_dists[k] ramps
    the heading by `step` over a window of width window_dist centered
    on the turn.
    """
    knots = [dist[0] - 1.0]
    vals = [h0]
    h = h0
    for d in turn_dists:
        knots.extend([d - 0.5 * window_dist, d + 0.5 * window_dist])
        vals.extend([h, h + step])
        h += step
    return np.interp(dist, knots, vals)


def _gen_line(spec: MotionSpec, t, lane: int) -> Trajectory:
    ext = spec.resolved_extent()
    dist = spec.speed * t
    phase = dist % (2.0 * ext)
    x = np.where(phase <= ext, phase, 2.0 * ext - phase)
    z = 3.5 + 0.8 * lane
    pos = np.stack([x, np.full_like(x, spec.head_height), np.full_like(x, z)], axis=-1)
    n_turns = int(dist[-1] // ext) + 2
    turn_dists = ext * np.arange(1, n_turns + 1)
    psi = _heading_profile(dist, turn_dists, math.pi / 2.0, math.pi, spec.speed * TURN_WINDOW)
    return Trajectory(t, pos, quat_from_yaw(psi), spec.rate)


def _gen_circle(spec: MotionSpec, t, user: int, users: int) -> Trajectory:
    r = spec.resolved_extent()
    cx, cz = ROOM_CENTER
    theta = (spec.speed / r) * t + 2.0 * math.pi * user / users
    x = cx + r * np.cos(theta)
    z = cz + r * np.sin(theta)
    pos = np.stack([x, np.full_like(x, spec.head_height), z], axis=-1)
    # always face the room center
    psi = np.arctan2(-np.cos(theta), -np.sin(theta))
    return Trajectory(t, pos, quat_from_yaw(psi), spec.rate)


def _gen_patrol(spec: MotionSpec, t, user: int, users: int) -> Trajectory:
    side = spec.resolved_extent()
    cx, cz = ROOM_CENTER
    h = side / 2.0
    corners = np.array([[cx - h, cz - h], [cx + h, cz - h], [cx + h, cz + h], [cx - h, cz + h]])
    dirs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    perimeter = 4.0 * side
    d0 = (user * perimeter / users + (side / 2.0 if user else 0.0)) % perimeter
    dist = d0 + spec.speed * t
    phase = dist % perimeter
    leg = np.minimum((phase // side).astype(int), 3)
    frac = phase - leg * side
    xz = corners[leg] + dirs[leg] * frac[:, None]
    pos = np.stack([xz[:, 0], np.full(len(t), spec.head_height), xz[:, 1]], axis=-1)
    k0 = int(math.floor(dist[0] / side)) + 1
    k1 = int(math.floor(dist[-1] / side)) + 2
    turn_dists = side * np.arange(k0, k1 + 1)
    h0 = math.pi / 2.0 - (k0 - 1) * math.pi / 2.0
    psi = _heading_profile(dist, turn_dists, h0, -math.pi / 2.0, spec.speed * TURN_WINDOW)
    return Trajectory(t, pos, quat_from_yaw(psi), spec.rate)


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _gen_fistbump(spec: MotionSpec, t) -> MotionSet:
    ext = spec.resolved_extent()
    cx, cz = ROOM_CENTER
    r = ext / 4.0
    offset = ext / 4.0 + 0.5
    contact_times = [round(k * spec.duration / 5.0 * spec.rate) / spec.rate for k in (1, 2, 3, 4)]
    blend = np.zeros(len(t))
    for tk in contact_times:
        rise = _smoothstep((t - (tk - APPROACH_WINDOW)) / APPROACH_WINDOW)
        fall = _smoothstep(((tk + APPROACH_WINDOW) - t) / APPROACH_WINDOW)
        blend = np.maximum(blend, np.minimum(rise, fall))

    users = []
    for u, sigma in enumerate((1.0, -1.0)):
        theta = (spec.speed / r) * t + math.pi / 2.0 + u * math.pi
        loop_x = cx - sigma * offset + r * np.cos(theta)
        loop_z = cz + r * np.sin(theta)
        loop_psi = np.arctan2(-np.sin(theta), np.cos(theta))
        stance_x = cx - sigma * STANCE_DISTANCE
        stance_psi = sigma * math.pi / 2.0

        x = loop_x + blend * (stance_x - loop_x)
        z = loop_z + blend * (cz - loop_z)
        dpsi = np.mod(stance_psi - loop_psi + math.pi, 2.0 * math.pi) - math.pi
        psi = loop_psi + blend * dpsi
        pos = np.stack([x, np.full(len(t), spec.head_height), z], axis=-1)
        quat = quat_from_yaw(psi)
        head = Trajectory(t, pos, quat, spec.rate)

        rest = pos + quat_rotate(quat, CONTROLLER_OFFSET)
        contact = CONTACT_POINT + np.array([-sigma * CONTACT_GAP / 2.0, 0.0, 0.0])
        ctrl_pos = rest + blend[:, None] * (contact - rest)
        ctrl = Trajectory(t, ctrl_pos, quat.copy(), spec.rate)
        users.append(UserMotion(head, ctrl))

    contacts = [ContactEvent(tk, CONTACT_POINT.copy()) for tk in contact_times]
    return MotionSet(users, contacts)


def gen_motion(spec: MotionSpec, users: int = 1) -> MotionSet:
    """Generate ground-truth trajectories for a scenario.

    Single-user circuits (line, circle, patrol) are head-only and
    support any user count via lane/phase offsets; fistbump is exactly
    two users and adds right-controller trajectories whose positions
    coincide within 2 cm at the four scripted contact times.
    """
    _validate_spec(spec, users)
    t = _time_grid(spec)
    if spec.kind == "fistbump":
        return _gen_fistbump(spec, t)
    gens = {
        "line": lambda u: _gen_line(spec, t, u),
        "circle": lambda u: _gen_circle(spec, t, u, users),
        "patrol": lambda u: _gen_patrol(spec, t, u, users),
    }
    return MotionSet([UserMotion(gens[spec.kind](u)) for u in range(users)])


@dataclass(frozen=True)
class TrackingLoss:
    """A one-off registration jump at `time` (relocalization event)."""

    time: float
    jump: Pose


@dataclass(frozen=True)
class DriftConfig:
    """Inside-out tracker error model.

    In random_walk mode the rates are diffusion coefficients (m/sqrt(s),
    rad/sqrt(s)); in linear mode they are constant biases (m/s along
    world +x, rad/s).  Yaw drift accrues about the wearer's current
    position, so heading error rotates subsequent motion about the
    user, not the world origin.  All-zero config reproduces the input
    exactly.
    """

    mode: str = "random_walk"
    position_drift_rate: float = 0.0
    yaw_drift_rate: float = 0.0
    white_noise_pos: float = 0.0
    tracking_loss: TrackingLoss | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random_walk", "linear"):
            raise ValueError(f"unknown drift mode {self.mode!r}")


@dataclass
class DriftTrack:
    """World-registration error over time: reported = drift(t) o truth."""

    t: np.ndarray
    quat: np.ndarray
    trans: np.ndarray

    def pose(self, i) -> Pose:
        return Pose(self.quat[i], self.trans[i])


def _is_null_drift(cfg: DriftConfig) -> bool:
    return (
        cfg.position_drift_rate == 0.0
        and cfg.yaw_drift_rate == 0.0
        and cfg.white_noise_pos == 0.0
        and cfg.tracking_loss is None
    )


def gen_drift(cfg: DriftConfig, times, anchors) -> DriftTrack:
    """Registration-error track sampled at `times`; `anchors` are the
    true head positions about which yaw error accrues."""
    times = np.asarray(times, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    n = len(times)
    rng = np.random.default_rng(cfg.seed)
    dt = np.diff(times)
    if cfg.mode == "linear":
        dpsi = cfg.yaw_drift_rate * dt
        dpos = np.zeros((n - 1, 3))
        dpos[:, 0] = cfg.position_drift_rate * dt
    else:
        root = np.sqrt(dt)
        dpsi = cfg.yaw_drift_rate * root * rng.standard_normal(n - 1)
        dpos = cfg.position_drift_rate * root[:, None] * rng.standard_normal((n - 1, 3))

    psi = np.zeros(n)
    trans = np.zeros((n, 3))
    if cfg.yaw_drift_rate == 0.0:
        if cfg.mode == "linear":
            trans[:, 0] = cfg.position_drift_rate * (times - times[0])
        elif n > 1:
            trans[1:] = np.cumsum(dpos, axis=0)
    else:
        psi[1:] = np.cumsum(dpsi)
        x = y = z = 0.0
        for i in range(1, n):
            a = dpsi[i - 1]
            ca, sa = math.cos(a), math.sin(a)
            cx = anchors[i, 0]
            cz = anchors[i, 2]
            rx = x - cx
            rz = z - cz
            x = cx + ca * rx + sa * rz + dpos[i - 1, 0]
            z = cz - sa * rx + ca * rz + dpos[i - 1, 2]
            y = y + dpos[i - 1, 1]
            trans[i] = (x, y, z)

    quat = quat_from_yaw(psi)
    if cfg.tracking_loss is not None:
        idx = int(np.searchsorted(times, cfg.tracking_loss.time))
        j = cfg.tracking_loss.jump
        quat[idx:] = quat_mul(j.q, quat[idx:])
        trans[idx:] = quat_rotate(j.q, trans[idx:]) + j.t
    return DriftTrack(times.copy(), quat, trans)


def apply_drift(drift: DriftTrack, traj: Trajectory, noise_pos=0.0, rng=None) -> Trajectory:
    quat = quat_normalize(quat_mul(drift.quat, traj.quat))
    pos = quat_rotate(drift.quat, traj.pos) + drift.trans
    if noise_pos > 0.0:
        pos = pos + noise_pos * rng.standard_normal(pos.shape)
    return Trajectory(traj.t.copy(), pos, quat, traj.rate)


def slam_track(gt: Trajectory, cfg: DriftConfig) -> Trajectory:
    """Device-frame camera track: ground truth distorted by the drift model.

    The device frame initially coincides with the world frame; its
    registration error then evolves per cfg.  A zero config returns the
    input unchanged.
    """
    if _is_null_drift(cfg):
        return gt.copy()
    drift = gen_drift(cfg, gt.t, gt.pos)
    rng = np.random.default_rng([cfg.seed, 1])
    return apply_drift(drift, gt, cfg.white_noise_pos, rng)


def track_rig(streams, cfg: DriftConfig):
    """Track several rigid streams (head first) through one shared drift
    realization, as devices report head and controllers in one frame."""
    head = streams[0]
    for s in streams[1:]:
        if not np.array_equal(s.t, head.t):
            raise ValueError("rig streams must share one time grid")
    if _is_null_drift(cfg):
        return [s.copy() for s in streams]
    drift = gen_drift(cfg, head.t, head.pos)
    out = []
    for k, s in enumerate(streams):
        rng = np.random.default_rng([cfg.seed, 1, k])
        out.append(apply_drift(drift, s, cfg.white_noise_pos, rng))
    return out


@dataclass(frozen=True)
class MocapObserverConfig:
    rate: float = 100.0
    noise_pos: float = 5e-4
    noise_rot: float = 1e-3
    latency_frames: int = 7
    jitter_frames: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.latency_frames < 0 or self.jitter_frames < 0:
            raise ValueError("latency_frames and jitter_frames must be non-negative")


@dataclass
class MocapObservation:
    """What the mocap system reports: the marker-body trajectory in the
    RH Z-up mocap frame, timestamped by availability at the client.

    trajectory.t[i] = capture_t[i] + delay; poses describe the body at
    capture_t[i].
    """

    trajectory: Trajectory
    capture_t: np.ndarray
    config: MocapObserverConfig


def _resample(gt: Trajectory, rate: float):
    if abs(rate - gt.rate) < 1e-9 and len(gt) > 1:
        return gt.t.copy(), gt.pos.copy(), gt.quat.copy()
    n = int(math.floor((gt.t[-1] - gt.t[0]) * rate)) + 1
    times = gt.t[0] + np.arange(n) / rate
    pos = np.empty((n, 3))
    for k in range(3):
        pos[:, k] = np.interp(times, gt.t, gt.pos[:, k])
    # sign-align then nlerp per component
    quat = gt.quat.copy()
    flips = np.cumsum(np.sum(quat[1:] * quat[:-1], axis=-1) < 0.0) % 2
    quat[1:][flips == 1] *= -1.0
    qi = np.empty((n, 4))
    for k in range(4):
        qi[:, k] = np.interp(times, gt.t, quat[:, k])
    return times, pos, quat_normalize(qi)


def mocap_observe(gt: Trajectory, extrinsics_inv: Pose, cfg: MocapObserverConfig) -> MocapObservation:
    """Observe ground-truth eye poses as a mocap rigid body.

    Each eye pose is right-composed with the inverse extrinsics to get
    the marker-body pose, expressed in the RH Z-up mocap frame, noised,
    and delayed by latency_frames (plus optional integer jitter) at the
    observer rate.
    """
    capture_t, pos, quat = _resample(gt, cfg.rate)
    identity_ext = np.array_equal(extrinsics_inv.q, [1.0, 0.0, 0.0, 0.0]) and not np.any(
        extrinsics_inv.t
    )
    if not identity_ext:
        pos = pos + quat_rotate(quat, extrinsics_inv.t)
        quat = quat_normalize(quat_mul(quat, extrinsics_inv.q))
    pos = convert_vector(pos)
    quat = convert_quat(quat)

    rng = np.random.default_rng([cfg.seed, 2])
    if cfg.noise_pos > 0.0:
        pos = pos + cfg.noise_pos * rng.standard_normal(pos.shape)
    if cfg.noise_rot > 0.0:
        nq = quat_from_rotvec(cfg.noise_rot * rng.standard_normal((len(quat), 3)))
        quat = quat_normalize(quat_mul(nq, quat))

    avail = capture_t + cfg.latency_frames / cfg.rate
    if cfg.jitter_frames > 0:
        avail = avail + rng.integers(0, cfg.jitter_frames + 1, len(avail)) / cfg.rate
        order = np.argsort(avail, kind="stable")
        avail, pos, quat, capture_t = avail[order], pos[order], quat[order], capture_t[order]
        keep = np.ones(len(avail), dtype=bool)
        keep[:-1] = avail[1:] > avail[:-1]
        avail, pos, quat, capture_t = avail[keep], pos[keep], quat[keep], capture_t[keep]

    traj = Trajectory(avail, pos, quat, cfg.rate)
    return MocapObservation(traj, capture_t, cfg)
