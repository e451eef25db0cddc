from __future__ import annotations

import numpy as np
import pytest

from cotrack import (
    Pose,
    Trajectory,
    apply_pose,
    compose,
    convert_handedness,
    convert_traj_handedness,
    geodesic_angle,
    load_csv,
    positions_at,
    quat_normalize,
    save_csv,
    transform_local,
    transform_world,
)


def _rand_traj(rng, n=50, rate=100.0):
    t = np.arange(n) / rate
    pos = rng.standard_normal((n, 3))
    quat = quat_normalize(rng.standard_normal((n, 4)))
    return Trajectory(t, pos, quat, rate)


def test_constructor_validates():
    t = np.array([0.0, 0.01, 0.02])
    pos = np.zeros((3, 3))
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (3, 1))
    Trajectory(t, pos, quat)
    with pytest.raises(ValueError):
        Trajectory(t[::-1].copy(), pos, quat)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0, 0.01]), pos, quat)
    with pytest.raises(ValueError):
        Trajectory(t, pos[:2], quat)
    with pytest.raises(ValueError):
        Trajectory(t, pos, quat[:, :3])
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0]), np.zeros((1, 3)), quat[:1])


def test_rate_inferred_from_median_dt():
    t = np.array([0.0, 0.01, 0.02, 0.03, 0.05])
    traj = Trajectory(t, np.zeros((5, 3)), np.tile([1.0, 0, 0, 0], (5, 1)))
    assert traj.rate == pytest.approx(100.0)


def test_time_slice_inclusive():
    rng = np.random.default_rng(20)
    traj = _rand_traj(rng, n=100)
    sub = traj.time_slice(0.10, 0.20)
    assert sub.t[0] == pytest.approx(0.10)
    assert sub.t[-1] == pytest.approx(0.20)
    assert len(sub) == 11
    assert sub.rate == traj.rate


def test_transform_world_matches_per_sample_compose():
    rng = np.random.default_rng(21)
    traj = _rand_traj(rng)
    p = Pose(quat_normalize(rng.standard_normal(4)), rng.standard_normal(3))
    out = transform_world(p, traj)
    for i in range(0, len(traj), 7):
        want = compose(p, traj.pose(i))
        assert np.allclose(out.pos[i], want.t, atol=1e-12)
        assert geodesic_angle(out.quat[i], want.q) < 1e-12


def test_transform_local_matches_per_sample_compose():
    rng = np.random.default_rng(22)
    traj = _rand_traj(rng)
    p = Pose(quat_normalize(rng.standard_normal(4)), rng.standard_normal(3))
    out = transform_local(traj, p)
    for i in range(0, len(traj), 7):
        want = compose(traj.pose(i), p)
        assert np.allclose(out.pos[i], want.t, atol=1e-12)
        assert geodesic_angle(out.quat[i], want.q) < 1e-12


def test_convert_traj_handedness_matches_pose_conversion():
    rng = np.random.default_rng(23)
    traj = _rand_traj(rng, n=20)
    out = convert_traj_handedness(traj)
    for i in range(len(traj)):
        want = convert_handedness(traj.pose(i))
        assert np.array_equal(out.pos[i], want.t)
        assert np.array_equal(out.quat[i], want.q)
    back = convert_traj_handedness(out)
    assert np.array_equal(back.pos, traj.pos)
    assert np.array_equal(back.quat, traj.quat)


def test_positions_at_interpolates_and_clamps():
    t = np.array([0.0, 1.0, 2.0])
    pos = np.array([[0.0, 0.0, 0.0], [2.0, 4.0, 6.0], [2.0, 4.0, 6.0]])
    quat = np.tile([1.0, 0, 0, 0], (3, 1))
    traj = Trajectory(t, pos, quat)
    out = positions_at(traj, [0.5, -1.0, 5.0])
    assert np.allclose(out[0], [1.0, 2.0, 3.0])
    assert np.allclose(out[1], [0.0, 0.0, 0.0])
    assert np.allclose(out[2], [2.0, 4.0, 6.0])


def test_csv_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(24)
    traj = _rand_traj(rng, n=64)
    path = tmp_path / "traj.csv"
    save_csv(traj, path)
    back = load_csv(path)
    assert np.array_equal(back.t, traj.t)
    assert np.array_equal(back.pos, traj.pos)
    assert np.array_equal(back.quat, traj.quat)


def test_csv_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(25)
    traj = _rand_traj(rng, n=32)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_csv(traj, p1)
    save_csv(traj.copy(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,x,y,z\n0,0,0,0\n")
    with pytest.raises(ValueError):
        load_csv(path)


def test_load_csv_rejects_empty_body(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("t,px,py,pz,qw,qx,qy,qz\n")
    with pytest.raises(ValueError):
        load_csv(path)
