"""Timestamped pose sequences and the trajectory CSV interchange format.

A trajectory file is a plain CSV with the exact header
``t,px,py,pz,qw,qx,qy,qz``; times in seconds, positions in meters,
quaternions scalar-first.  One trajectory per file.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import Pose, quat_mul, quat_normalize, quat_rotate, convert_quat, convert_vector

CSV_HEADER = "t,px,py,pz,qw,qx,qy,qz"


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    pose: Pose


class Trajectory:
    """Poses sampled at strictly increasing times, stored as arrays.

    Attributes
    ----------
    t : (N,) float seconds
    pos : (N, 3) float meters
    quat : (N, 4) float unit quaternions, scalar-first
    rate : float nominal sample rate in Hz (inferred from timestamps
        when not given; must be inferable or explicit)
    """

    def __init__(self, t, pos, quat, rate=None):
        t = np.asarray(t, dtype=float)
        pos = np.asarray(pos, dtype=float)
        quat = np.asarray(quat, dtype=float)
        if t.ndim != 1:
            raise ValueError("timestamps must be a 1-D array")
        n = len(t)
        if pos.shape != (n, 3):
            raise ValueError(f"positions must have shape ({n}, 3)")
        if quat.shape != (n, 4):
            raise ValueError(f"quaternions must have shape ({n}, 4)")
        if n > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if rate is None:
            if n < 2:
                raise ValueError("rate must be given for trajectories shorter than 2 samples")
            rate = 1.0 / float(np.median(np.diff(t)))
        if not rate > 0:
            raise ValueError("nominal rate must be positive")
        self.t = t
        self.pos = pos
        self.quat = quat_normalize(quat)
        self.rate = float(rate)

    def __len__(self):
        return len(self.t)

    def pose(self, i) -> Pose:
        return Pose(self.quat[i], self.pos[i])

    def sample(self, i) -> TrajectorySample:
        return TrajectorySample(float(self.t[i]), self.pose(i))

    def time_slice(self, t0, t1) -> "Trajectory":
        """Sub-trajectory with t0 <= t <= t1."""
        keep = (self.t >= t0) & (self.t <= t1)
        return Trajectory(self.t[keep], self.pos[keep], self.quat[keep], self.rate)

    def copy(self) -> "Trajectory":
        return Trajectory(self.t.copy(), self.pos.copy(), self.quat.copy(), self.rate)


def transform_world(p: Pose, traj: Trajectory) -> Trajectory:
    """Re-register a trajectory: compose the fixed pose p on the left of every sample."""
    q = quat_normalize(quat_mul(p.q, traj.quat))
    pos = quat_rotate(p.q, traj.pos) + p.t
    return Trajectory(traj.t.copy(), pos, q, traj.rate)


def transform_local(traj: Trajectory, p: Pose) -> Trajectory:
    """Compose the fixed pose p on the right of every sample (body-frame offset)."""
    q = quat_normalize(quat_mul(traj.quat, p.q))
    pos = traj.pos + quat_rotate(traj.quat, p.t)
    return Trajectory(traj.t.copy(), pos, q, traj.rate)


def convert_traj_handedness(traj: Trajectory) -> Trajectory:
    """Apply the RH Z-up <-> Y-up frame mapping to every sample."""
    return Trajectory(traj.t.copy(), convert_vector(traj.pos), convert_quat(traj.quat), traj.rate)


def positions_at(traj: Trajectory, times) -> np.ndarray:
    """Linearly interpolated positions at the query times (clamped at the ends)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), 3))
    for k in range(3):
        out[:, k] = np.interp(times, traj.t, traj.pos[:, k])
    return out


def save_csv(traj: Trajectory, path):
    """Write a trajectory in the interchange format with full float precision."""
    path = Path(path)
    lines = [CSV_HEADER]
    for i in range(len(traj)):
        row = [traj.t[i], *traj.pos[i], *traj.quat[i]]
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path, rate=None) -> Trajectory:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
        body = fh.read()
    if not body.strip():
        raise ValueError(f"{path}: no trajectory data after the header")
    data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)
    if data.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns of trajectory data")
    return Trajectory(data[:, 0], data[:, 1:4], data[:, 4:8], rate)
