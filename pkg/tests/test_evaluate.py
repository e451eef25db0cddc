from __future__ import annotations

import json

import numpy as np
import pytest

from cotrack import (
    InsufficientDataError,
    MetricsReport,
    Pose,
    Trajectory,
    UndefinedCorrelationError,
    ate_rmse,
    ate_series,
    estimate_latency,
    export_report,
    transform_world,
)

RATE = 100.0


def _traj(pos, t0=0.0, rate=RATE):
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    t = t0 + np.arange(n) / rate
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return Trajectory(t, pos, q)


def _rich(n, seed, t0=0.0):
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal((n, 3)) * 0.01
    return _traj(np.cumsum(steps, axis=0), t0=t0)


def test_ate_constant_offset_exact():
    ref = _rich(200, 1)
    est = Trajectory(ref.t, ref.pos + np.array([0.0, 0.03, 0.0]), ref.quat)
    assert ate_rmse(est, ref) == pytest.approx(0.03, abs=1e-15)


def test_ate_alternating_offsets_frozen():
    ref = _rich(200, 2)
    off = np.where((np.arange(200) % 2 == 0)[:, None], 0.03, 0.04)
    est = Trajectory(ref.t, ref.pos + off * np.array([1.0, 0.0, 0.0]), ref.quat)
    # sqrt((0.03^2 + 0.04^2) / 2)
    assert ate_rmse(est, ref) == pytest.approx(0.035355339059327376, abs=1e-15)


def test_ate_aligned_removes_rigid_offset():
    ref = _rich(300, 3)
    w = Pose.from_yaw(0.7, [1.0, 0.2, -0.5])
    est = transform_world(w, ref)
    assert ate_rmse(est, ref) > 0.5
    assert ate_rmse(est, ref, aligned=True) < 1e-9


def test_ate_requires_two_pairs():
    a = _rich(50, 4)
    b = _rich(50, 4, t0=10.0)
    with pytest.raises(InsufficientDataError):
        ate_rmse(a, b)


def test_ate_series_values():
    ref = _rich(100, 5)
    delta = np.array([0.01, -0.02, 0.03])
    est = Trajectory(ref.t, ref.pos + delta, ref.quat)
    t, err = ate_series(est, ref)
    assert np.array_equal(t, ref.t)
    assert np.allclose(err, delta, atol=1e-15)
    assert err.shape == (100, 3)


def _delayed(base, lag_frames):
    return Trajectory(base.t + lag_frames / RATE, base.pos, base.quat)


def test_latency_pure_delay_recovered():
    base = _rich(400, 6)
    for lag in (7, 0, 3):
        got = estimate_latency(base, _delayed(base, lag), RATE, 30)
        assert got.lag_frames == lag
        assert got.latency == pytest.approx(lag / RATE, abs=1e-12)
        # the shifted grid lands between samples, so interpolation
        # nudges the peak a hair below the ideal 1.0
        assert got.peak_correlation > 0.999
        assert not got.tie


def test_latency_tuple_unpacking():
    base = _rich(400, 7)
    lag, latency = estimate_latency(base, _delayed(base, 5), RATE, 20)
    assert (lag, latency) == (5, pytest.approx(0.05))


def test_latency_antisymmetric_under_swap():
    base = _rich(400, 8)
    delayed = _delayed(base, 7)
    fwd = estimate_latency(base, delayed, RATE, 30)
    rev = estimate_latency(delayed, base, RATE, 30)
    assert (fwd.lag_frames, rev.lag_frames) == (7, -7)


def test_latency_invariant_under_shared_world_transform():
    base = _rich(400, 9)
    delayed = _delayed(base, 4)
    w = Pose.from_yaw(-1.1, [2.0, 0.5, -3.0])
    got = estimate_latency(transform_world(w, base), transform_world(w, delayed), RATE, 30)
    assert got.lag_frames == 4


def test_latency_insufficient_overlap():
    base = _rich(50, 10)
    with pytest.raises(InsufficientDataError):
        estimate_latency(base, base, RATE, 30)


def test_latency_undefined_for_static_and_uniform_motion():
    static = _traj(np.zeros((200, 3)))
    with pytest.raises(UndefinedCorrelationError):
        estimate_latency(static, static, RATE, 10)
    line = _traj(np.outer(np.arange(200), [0.01, 0.0, 0.0]))
    with pytest.raises(UndefinedCorrelationError):
        estimate_latency(line, line, RATE, 10)


def test_latency_periodic_signal_flags_tie():
    # square wave with period 2 frames: correlation is exactly +1 at
    # every even lag, so the peak ties and the smallest |lag| wins
    x = (np.arange(11) % 2).astype(float)
    traj = _traj(np.column_stack([x, np.zeros(11), np.zeros(11)]))
    got = estimate_latency(traj, traj, RATE, 2)
    assert got.tie
    assert got.lag_frames == 0
    assert got.peak_correlation == 1.0


def test_latency_rejects_negative_max_lag():
    base = _rich(100, 11)
    with pytest.raises(ValueError):
        estimate_latency(base, base, RATE, -1)


def _report(**kw):
    defaults = dict(scenario="unit", seed=3, ate_rmse=0.0123, sample_count=42)
    defaults.update(kw)
    return MetricsReport(**defaults)


def test_export_report_file_set(tmp_path):
    ref = _rich(200, 12)
    est = Trajectory(ref.t, ref.pos + 0.01, ref.quat)
    t, err = ate_series(est, ref)
    rep = _report(
        latency=estimate_latency(ref, _delayed(ref, 2), RATE, 10),
        error_times=t,
        error_series=err,
        config={"rate": 100.0},
    )
    written = export_report(rep, {"est": est, "ref": ref}, tmp_path, contact_times=[1.0])
    names = [p.name for p in written]
    assert names[0] == "unit_3_metrics.json"
    assert set(names) == {
        "unit_3_metrics.json",
        "unit_3_est.csv",
        "unit_3_ref.csv",
        "unit_3_errors.csv",
        "unit_3_topdown.svg",
        "unit_3_event0_topdown.svg",
        "unit_3_event0_3d.svg",
    }
    for p in written:
        assert p.exists() and p.stat().st_size > 0

    payload = json.loads((tmp_path / "unit_3_metrics.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["scenario"] == "unit"
    assert payload["seed"] == 3
    assert payload["metrics"]["ate_rmse_m"] == pytest.approx(0.0123)
    assert payload["metrics"]["sample_count"] == 42
    assert payload["metrics"]["latency"]["lag_frames"] == 2
    assert payload["config"] == {"rate": 100.0}
    assert payload["files"]["trajectory_est"] == "unit_3_est.csv"

    errors = (tmp_path / "unit_3_errors.csv").read_text().splitlines()
    assert errors[0] == "t,ex,ey,ez"
    first = [float(v) for v in errors[1].split(",")]
    assert first[0] == ref.t[0]
    # repr round-trips exactly, so the file holds the float64 residuals bitwise
    assert first[1:] == list(err[0])


def test_export_report_deterministic_bytes(tmp_path):
    ref = _rich(150, 13)
    est = Trajectory(ref.t, ref.pos + 0.02, ref.quat)
    t, err = ate_series(est, ref)
    outputs = []
    for sub in ("a", "b"):
        rep = _report(error_times=t, error_series=err)
        written = export_report(rep, {"est": est, "ref": ref}, tmp_path / sub,
                                contact_times=[0.75])
        outputs.append({p.name: p.read_bytes() for p in written})
    assert outputs[0].keys() == outputs[1].keys()
    for name in outputs[0]:
        assert outputs[0][name] == outputs[1][name], name


def test_export_report_json_only_without_trajectories(tmp_path):
    written = export_report(_report(), {}, tmp_path)
    assert [p.name for p in written] == ["unit_3_metrics.json"]
    payload = json.loads(written[0].read_text())
    assert payload["files"] == {}
    assert "latency" not in payload["metrics"]
