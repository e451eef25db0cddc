"""Rigid-body pose algebra on unit quaternions.

Conventions used throughout the package:

* Quaternions are Hamilton, scalar-first ``(w, x, y, z)``, and act as
  active rotations: ``quat_rotate(q, v)`` rotates the vector, not the
  frame.
* The in-memory world frame is Y-up, Z-forward, X-right.  Yaw is the
  twist component about ``WORLD_UP`` of a swing-twist decomposition,
  reported in ``(-pi, pi]``.  Heading 0 faces +Z and positive yaw
  carries +Z toward +X.
* Mocap data natively lives in a right-handed Z-up frame.
  ``convert_handedness`` maps poses from that frame into the Y-up frame
  above by swapping the y/z position components and adjusting the
  quaternion accordingly; the mapping is an involution, so the same
  function converts back.

All quaternion/vector helpers broadcast over leading array dimensions,
so the same code path serves single poses and whole trajectories.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedYawError

GIMBAL_EPS = 1e-6


@dataclass(frozen=True)
class Axis:
    """A named world axis."""

    label: str
    vector: np.ndarray


WORLD_UP = Axis("world-up", np.array([0.0, 1.0, 0.0]))
FORWARD = Axis("forward", np.array([0.0, 0.0, 1.0]))
RIGHT = Axis("right", np.array([1.0, 0.0, 0.0]))


def quat_normalize(q):
    """Return q scaled to unit norm. Raises ValueError on a near-zero norm.

    Rows already unit to within 1e-12 pass through bitwise, so
    re-wrapping normalized data (trajectory copies, pose accessors)
    never perturbs it.
    """
    q = np.asarray(q, dtype=float)
    n = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    if np.any(n < 1e-6):
        raise ValueError("cannot normalize near-zero quaternion")
    return np.where(np.abs(n - 1.0) < 1e-12, q, q / n)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def _cross3(a, b):
    # same component expressions as np.cross, without its axis-juggling
    # overhead, which dominates per-frame solves
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def quat_mul(a, b):
    """Hamilton product a*b (apply b first, then a, as active rotations)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + _cross3(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    t = 2.0 * _cross3(u, v)
    return v + q[..., :1] * t + _cross3(u, t)


def quat_from_axis_angle(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("rotation axis must be nonzero")
    axis = axis / n
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    w = np.cos(half)[..., None]
    v = np.sin(half)[..., None] * axis
    return np.concatenate([w, v], axis=-1)


def quat_from_yaw(angle):
    """Pure rotation about WORLD_UP by `angle` radians. Broadcasts."""
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, np.sin(half), zeros], axis=-1)


def quat_from_rotvec(rv):
    """Quaternions from rotation vectors (axis * angle). Broadcasts."""
    rv = np.asarray(rv, dtype=float)
    angle = np.sqrt(np.sum(rv * rv, axis=-1, keepdims=True))
    half = 0.5 * angle
    # sinc form is stable at angle -> 0
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rv], axis=-1)


def quat_to_matrix(q):
    """3x3 rotation matrix for a single unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m):
    """Unit quaternion (w >= 0) for a single 3x3 rotation matrix."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def slerp(q0, q1, u):
    """Spherical interpolation from q0 (u=0) to q1 (u=1), shortest arc."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        return quat_normalize(q0 + u * (q1 - q0))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return (math.sin((1.0 - u) * theta) / s) * q0 + (math.sin(u * theta) / s) * q1


def geodesic_angle(q1, q2):
    """Rotation angle in [0, pi] between two unit quaternions.

    Sign-invariant: q and -q describe the same rotation, so the distance
    between them is 0.  Uses the atan2 chord form, which keeps full
    precision near 0 where acos of the dot product loses ~1e-8.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    dot = np.sum(q1 * q2, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    diff = np.linalg.norm(q1 - q2, axis=-1)
    summ = np.linalg.norm(q1 + q2, axis=-1)
    ang = 4.0 * np.arctan2(diff, summ)
    # the half-angle between quats doubles into rotation angle; clamp wrap
    ang = np.where(ang > np.pi, 2.0 * np.pi - ang, ang)
    if ang.ndim == 0:
        return float(ang)
    return ang


def wrap_angle(a):
    """Wrap an angle (or array) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: rotation quaternion `q` (w,x,y,z) and translation `t` in meters.

    Arrays may carry leading batch dimensions; all operations broadcast.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.q, dtype=float))
        t = np.asarray(self.t, dtype=float)
        if q.shape[-1] != 4:
            raise ValueError("quaternion must have 4 components")
        if t.shape[-1] != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_translation(cls, x, y, z):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.array([float(x), float(y), float(z)]))

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=None):
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        return cls(quat_from_axis_angle(axis, angle), t)

    @classmethod
    def from_yaw(cls, angle, translation=None):
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        return cls(quat_from_yaw(angle), t)


def compose(a: Pose, b: Pose) -> Pose:
    """The pose applying b first, then a."""
    return Pose(quat_mul(a.q, b.q), a.t + quat_rotate(a.q, b.t))


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.q)
    return Pose(qc, -quat_rotate(qc, p.t))


def apply_pose(p: Pose, v):
    """Map point(s) v through the rigid transform p."""
    return quat_rotate(p.q, v) + p.t


def yaw_of(q):
    """Twist angle about WORLD_UP of the swing-twist decomposition of q.

    Returns a float in (-pi, pi] for a single quaternion, or an array
    for batched input.  Raises UndefinedYawError when the rotated
    forward axis is parallel to world-up within GIMBAL_EPS, where
    heading carries no information.
    """
    q = np.asarray(q, dtype=float)
    fwd = quat_rotate(q, FORWARD.vector)
    horiz = np.hypot(fwd[..., 0], fwd[..., 2])
    if np.any(horiz < GIMBAL_EPS):
        raise UndefinedYawError("forward axis is parallel to world-up; yaw undefined")
    qc = np.where(q[..., :1] < 0.0, -q, q)
    ang = 2.0 * np.arctan2(qc[..., 2], qc[..., 0])
    ang = np.where(ang <= -np.pi, ang + 2.0 * np.pi, ang)
    if ang.ndim == 0:
        return float(ang)
    return ang


def yaw_only(q):
    """The pure-yaw quaternion keeping only the twist of q about WORLD_UP."""
    return quat_from_yaw(yaw_of(q))


def convert_vector(v):
    """Map a vector between the RH Z-up mocap frame and the Y-up frame (involution)."""
    v = np.asarray(v, dtype=float)
    return v[..., [0, 2, 1]]


def convert_quat(q):
    """Map a rotation between the RH Z-up mocap frame and the Y-up frame.

    Derived from conjugating the rotation by the y/z swap: the vector
    part follows the axes and flips sign because the swap reverses
    orientation.  Applying the function twice returns the input.
    """
    q = np.asarray(q, dtype=float)
    w = q[..., :1]
    x = q[..., 1:2]
    y = q[..., 2:3]
    z = q[..., 3:4]
    return np.concatenate([w, -x, -z, -y], axis=-1)


def convert_handedness(p: Pose) -> Pose:
    """Re-express a pose across the RH Z-up <-> Y-up frame mapping."""
    return Pose(convert_quat(p.q), convert_vector(p.t))


def pose_error(a: Pose, b: Pose):
    """(translation distance, rotation geodesic angle) between two poses."""
    dp = np.linalg.norm(a.t - b.t, axis=-1)
    if dp.ndim == 0:
        dp = float(dp)
    return dp, geodesic_angle(a.q, b.q)
