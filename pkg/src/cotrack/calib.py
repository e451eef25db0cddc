"""Extrinsics calibration between a mocap rigid body and the device eye pose.

Given time-paired world poses of the tracked marker body and of the
device eye, the fixed body-to-eye transform is recovered per sample as

    T_i = inverse(mocap_i) o eye_i

and aggregated in closed form: arithmetic mean of translations, chordal
(sign-aligned arithmetic) mean of quaternions.  This minimizes the
summed squared translation distance plus squared quaternion chord
distance exactly, so no iterative refinement is run.

When the two trajectories are not expressed in a common world frame,
``umeyama_align`` on matched positions gives a rigid pre-alignment; note
the lever arm between body and eye biases that fit, so prefer feeding
both streams in one frame when possible.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InconsistentDataError, InsufficientDataError
from .geom import (
    Pose,
    geodesic_angle,
    quat_conj,
    quat_from_matrix,
    quat_mul,
    quat_normalize,
    quat_rotate,
)
from .trajectory import Trajectory, TrajectorySample, transform_world

MIN_PAIRS_DEFAULT = 50
MAX_DT_DEFAULT = 0.005
SINGULARITY_RATIO = 1e-12


@dataclass(frozen=True)
class Extrinsics:
    """A calibrated body-to-eye transform with its fit quality.

    sample_count is 0 for an injected (not estimated) transform.
    """

    transform: Pose
    rms_position_residual: float = 0.0
    rms_rotation_residual: float = 0.0
    sample_count: int = 0


def _nearest_indices(src_t, query_t):
    """Index of the nearest src time for each query time; ties pick the earlier."""
    idx = np.searchsorted(src_t, query_t)
    left = np.clip(idx - 1, 0, len(src_t) - 1)
    right = np.clip(idx, 0, len(src_t) - 1)
    d_left = np.abs(query_t - src_t[left])
    d_right = np.abs(query_t - src_t[right])
    return np.where(d_left <= d_right, left, right)


def associate_indices(a: Trajectory, b: Trajectory, max_dt=MAX_DT_DEFAULT):
    """Mutual nearest-neighbor pairing of two trajectories by timestamp.

    A pair (i, j) is kept when b[j] is the nearest b-sample to a[i],
    a[i] is the nearest a-sample to b[j], and |t_a - t_b| <= max_dt.
    Each sample appears in at most one pair; pairs come back in time
    order.  The rule is symmetric, so swapping the arguments swaps the
    index arrays but not the pairing.
    """
    if len(a) == 0 or len(b) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    b_of_a = _nearest_indices(b.t, a.t)
    a_of_b = _nearest_indices(a.t, b.t)
    ia = np.arange(len(a))
    mutual = a_of_b[b_of_a] == ia
    close = np.abs(a.t - b.t[b_of_a]) <= max_dt
    keep = mutual & close
    return ia[keep], b_of_a[keep]


def associate(a: Trajectory, b: Trajectory, max_dt=MAX_DT_DEFAULT):
    """Paired samples (see associate_indices for the matching rule)."""
    ia, ib = associate_indices(a, b, max_dt)
    return [
        (TrajectorySample(float(a.t[i]), a.pose(i)), TrajectorySample(float(b.t[j]), b.pose(j)))
        for i, j in zip(ia, ib)
    ]


def umeyama_align(points_a, points_b) -> Pose:
    """Rigid transform (rotation + translation, scale fixed to 1) mapping
    point set a onto point set b in the least-squares sense.

    Raises DegenerateGeometryError when the point geometry does not
    constrain the rotation (smallest singular value of the cross
    covariance below SINGULARITY_RATIO of the largest, e.g. collinear
    input).  A reflection-shaped optimum is folded back to a proper
    rotation by the determinant correction.
    """
    pa = np.asarray(points_a, dtype=float)
    pb = np.asarray(points_b, dtype=float)
    if pa.shape != pb.shape or pa.ndim != 2 or pa.shape[1] != 3:
        raise ValueError("point sets must both have shape (N, 3)")
    if len(pa) < 3:
        raise InsufficientDataError("at least 3 point pairs are required")
    mu_a = pa.mean(axis=0)
    mu_b = pb.mean(axis=0)
    cov = (pb - mu_b).T @ (pa - mu_a) / len(pa)
    u, s, vt = np.linalg.svd(cov)
    if s[-1] < SINGULARITY_RATIO * s[0]:
        raise DegenerateGeometryError(
            "point geometry does not constrain the rotation (collinear or degenerate)"
        )
    d = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    q = quat_from_matrix(rot)
    t = mu_b - rot @ mu_a
    return Pose(q, t)


def estimate_extrinsics(pairs, min_pairs=MIN_PAIRS_DEFAULT) -> Extrinsics:
    """Closed-form body-to-eye transform from (mocap_pose, eye_pose) world pairs.

    Raises InsufficientDataError below min_pairs and
    InconsistentDataError when the per-sample rotations disagree so
    strongly that the sign-aligned quaternion mean loses more than half
    its norm.
    """
    pairs = list(pairs)
    if len(pairs) < min_pairs:
        raise InsufficientDataError(
            f"{len(pairs)} pose pairs given, need at least {min_pairs}"
        )
    mq = np.stack([p[0].q for p in pairs])
    mt = np.stack([p[0].t for p in pairs])
    eq = np.stack([p[1].q for p in pairs])
    et = np.stack([p[1].t for p in pairs])
    return _estimate_from_arrays(mq, mt, eq, et)


def _estimate_from_arrays(mq, mt, eq, et) -> Extrinsics:
    mc = quat_conj(mq)
    t_i = quat_rotate(mc, et - mt)
    q_i = quat_mul(mc, eq)
    signs = np.where(np.sum(q_i * q_i[0], axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    q_mean = np.mean(signs * q_i, axis=0)
    norm = float(np.linalg.norm(q_mean))
    if norm < 0.5:
        raise InconsistentDataError(
            f"per-sample rotations disagree (mean quaternion norm {norm:.3f} < 0.5)"
        )
    q_hat = q_mean / norm
    t_hat = t_i.mean(axis=0)
    rms_pos = float(np.sqrt(np.mean(np.sum((t_i - t_hat) ** 2, axis=-1))))
    rms_rot = float(np.sqrt(np.mean(geodesic_angle(q_i, q_hat) ** 2)))
    return Extrinsics(Pose(q_hat, t_hat), rms_pos, rms_rot, len(q_i))


@dataclass(frozen=True)
class CalibrationResult:
    extrinsics: Extrinsics
    pair_count: int
    world_alignment: Pose | None = None


def calibrate(
    mocap: Trajectory,
    eye: Trajectory,
    max_dt=MAX_DT_DEFAULT,
    min_pairs=MIN_PAIRS_DEFAULT,
    pre_align=False,
) -> CalibrationResult:
    """Associate two trajectories and estimate the body-to-eye extrinsics.

    pre_align fits a rigid world transform (umeyama on matched
    positions) from the mocap frame onto the eye frame first; use it
    only when the streams are not already expressed in one world frame.
    """
    ia, ib = associate_indices(mocap, eye, max_dt)
    if len(ia) < min_pairs:
        raise InsufficientDataError(
            f"{len(ia)} associated pairs within {max_dt} s, need at least {min_pairs}"
        )
    world = None
    if pre_align:
        world = umeyama_align(mocap.pos[ia], eye.pos[ib])
        mocap = transform_world(world, mocap)
    ext = _estimate_from_arrays(mocap.quat[ia], mocap.pos[ia], eye.quat[ib], eye.pos[ib])
    return CalibrationResult(ext, len(ia), world)
