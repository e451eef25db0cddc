from __future__ import annotations

import json
import socket
import struct

import numpy as np
import pytest

from cotrack import (
    BodyEntry,
    Pose,
    RigidBodyPacket,
    Trajectory,
    ate_rmse,
    encode_packet,
    load_csv,
    save_csv,
    transform_local,
)
from cotrack.cli import _build_parser, main


def _rich(n, seed, t0=0.0, rate=100.0):
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.standard_normal((n, 3)) * 0.01, axis=0)
    ax = rng.standard_normal((n, 3)) * 0.2
    ang = np.linalg.norm(ax, axis=1)
    q = np.column_stack([
        np.cos(ang / 2),
        ax * np.where(ang > 0, np.sin(ang / 2) / np.maximum(ang, 1e-30), 0.5)[:, None],
    ])
    return Trajectory(t0 + np.arange(n) / rate, pos, q)


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


def test_calibrate_round_trip(tmp_path, capsys):
    body = _rich(200, 21)
    rig = Pose.from_yaw(0.3, [0.02, 0.09, -0.05])
    eye = transform_local(body, rig)
    save_csv(body, tmp_path / "body.csv")
    save_csv(eye, tmp_path / "eye.csv")
    out = tmp_path / "ext.json"
    rc = main(["calibrate", str(tmp_path / "body.csv"), str(tmp_path / "eye.csv"),
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert np.allclose(payload["transform"]["position"], rig.t, atol=1e-9)
    q = np.array(payload["transform"]["quat"])
    assert min(np.linalg.norm(q - rig.q), np.linalg.norm(q + rig.q)) < 1e-9
    assert payload["pair_count"] == 200
    assert "extrinsics written" in capsys.readouterr().out


def test_calibrate_too_few_pairs_exit_3(tmp_path, capsys):
    body = _rich(10, 22)
    save_csv(body, tmp_path / "body.csv")
    save_csv(body, tmp_path / "eye.csv")
    rc = main(["calibrate", str(tmp_path / "body.csv"), str(tmp_path / "eye.csv"),
               "--out", str(tmp_path / "ext.json")])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_calibrate_missing_file_exit_6(tmp_path, capsys):
    body = _rich(10, 23)
    save_csv(body, tmp_path / "body.csv")
    rc = main(["calibrate", str(tmp_path / "body.csv"), str(tmp_path / "nope.csv"),
               "--out", str(tmp_path / "ext.json")])
    assert rc == 6
    assert "error:" in capsys.readouterr().err


_CLEAN_YAML = """\
scenario:
  kind: line
  duration: 6.0
mocap:
  noise_pos: 0.0
  noise_rot: 0.0
  latency_frames: 0
  jitter_frames: 0
"""


def test_simulate_clean_run_tracks_to_float32_wire_precision(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(_CLEAN_YAML)
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfg), "--output-dir", str(out)])
    assert rc == 0
    est = load_csv(out / "line_0_user1_est_head.csv")
    gt = load_csv(out / "line_0_user1_gt_head.csv")
    # positions cross the wire as f32 millimeters
    assert ate_rmse(est, gt) < 1e-6
    run = json.loads((out / "line_0_run.json").read_text())
    assert run["users"][0]["session_phase"] == "tracking"
    # capture timestamps are whole microseconds on the wire
    assert abs(run["users"][0]["transport_delay_mean_s"]) < 1e-6
    assert "ate_rmse" in capsys.readouterr().out


_NOISY_YAML = """\
scenario:
  kind: line
  duration: 4.0
drift:
  mode: random_walk
  white_noise_pos: 0.001
"""


def test_simulate_seed_override_reseeds_subsystems(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(_NOISY_YAML)
    outs = {}
    for seed in (1, 2, 1):
        out = tmp_path / f"s{seed}_{len(outs)}"
        rc = main(["simulate", "--config", str(cfg), "--seed", str(seed),
                   "--output-dir", str(out)])
        assert rc == 0
        outs[out] = (out / f"line_{seed}_user1_cam_head.csv").read_bytes()
    a, b, a2 = outs.values()
    assert a != b
    assert a == a2


def test_simulate_output_tree_deterministic(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(_NOISY_YAML + "users: 2\n")
    trees = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert main(["simulate", "--config", str(cfg), "--output-dir", str(out)]) == 0
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert trees[0].keys() == trees[1].keys()
    for name in trees[0]:
        assert trees[0][name] == trees[1][name], name
    assert "line_0_hub.bin" in trees[0]
    assert "line_0_user2_est_head.csv" in trees[0]


def test_simulate_no_correction_flag(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(_NOISY_YAML)
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfg), "--output-dir", str(out),
               "--no-correction"])
    assert rc == 0
    events = json.loads((out / "line_0_user1_events.json").read_text())
    assert [e["type"] for e in events] == ["initial_align"]


def test_simulate_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scenario:\n  kind: line\n  velocity: 2.0\n")
    rc = main(["simulate", "--config", str(cfg)])
    assert rc == 2
    assert "velocity" in capsys.readouterr().err


def test_simulate_invalid_yaml_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scenario: [unclosed\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "error:" in capsys.readouterr().err


def test_simulate_missing_config_exit_6(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 6


def _wire_file(tmp_path, n=10):
    frames = []
    poses = []
    frames.append(encode_packet(RigidBodyPacket(0, 0, [BodyEntry.placeholder(1)])))
    for i in range(n):
        p = Pose.from_yaw(0.01 * i, [1.0 + 0.1 * i, 1.6, 2.0])
        poses.append(p)
        pkt = RigidBodyPacket(i + 1, (i + 1) * 10000, [BodyEntry.from_pose(1, p)])
        frames.append(encode_packet(pkt))
    path = tmp_path / "capture.bin"
    path.write_bytes(b"".join(frames))
    return path, poses


def test_replay_round_trip(tmp_path, capsys):
    wire, poses = _wire_file(tmp_path)
    out = tmp_path / "replayed.csv"
    rc = main(["replay", str(wire), "--body-id", "1", "--out", str(out)])
    assert rc == 0
    got = load_csv(out)
    assert len(got) == len(poses)
    assert np.allclose(got.pos, [p.t for p in poses], atol=1e-6)
    text = capsys.readouterr().out
    assert "11 packets, 1 placeholders, 10 poses" in text


def test_replay_trailing_garbage_exit_8(tmp_path):
    wire, _ = _wire_file(tmp_path)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(wire.read_bytes() + b"\x99\x99")
    assert main(["replay", str(bad)]) == 8


def test_replay_too_few_poses_exit_3(tmp_path):
    frames = encode_packet(RigidBodyPacket(0, 0, [BodyEntry.placeholder(1)]))
    path = tmp_path / "short.bin"
    path.write_bytes(frames)
    assert main(["replay", str(path), "--out", str(tmp_path / "x.csv")]) == 3


def test_replay_missing_file_exit_6(tmp_path):
    assert main(["replay", str(tmp_path / "nope.bin")]) == 6


def test_evaluate_full_report(tmp_path, capsys):
    ref = _rich(400, 24)
    est = Trajectory(ref.t, ref.pos + 0.005, ref.quat)
    mocap = Trajectory(est.t + 0.07, est.pos, est.quat)
    for name, traj in (("ref", ref), ("est", est), ("mocap", mocap)):
        save_csv(traj, tmp_path / f"{name}.csv")
    contacts = tmp_path / "contacts.json"
    contacts.write_text(json.dumps([{"t": 2.0, "point": [0, 0, 0]}]))
    out = tmp_path / "report"
    rc = main([
        "evaluate", "--est", str(tmp_path / "est.csv"), "--ref", str(tmp_path / "ref.csv"),
        "--mocap", str(tmp_path / "mocap.csv"), "--contacts", str(contacts),
        "--out", str(out), "--scenario", "fix", "--seed", "4",
        "--max-lag", "10", "--aligned",
    ])
    assert rc == 0
    metrics = json.loads((out / "fix_4_metrics.json").read_text())["metrics"]
    assert metrics["ate_rmse_m"] == pytest.approx(0.005 * np.sqrt(3), abs=1e-12)
    assert metrics["latency"]["lag_frames"] == 7
    assert metrics["latency"]["latency_s"] == pytest.approx(0.07)
    assert "ate_rmse_aligned_m" in metrics
    assert metrics["ate_rmse_latency_compensated_m"] < metrics["ate_vs_mocap_uncompensated_m"]
    assert (out / "fix_4_event0_topdown.svg").exists()
    text = capsys.readouterr().out
    assert "latency estimate 70 ms (7 frames)" in text


def test_evaluate_static_signal_exit_3(tmp_path):
    n = 300
    t = np.arange(n) / 100.0
    pos = np.tile([1.0, 1.6, 2.0], (n, 1))
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    static = Trajectory(t, pos, q)
    save_csv(static, tmp_path / "a.csv")
    save_csv(static, tmp_path / "b.csv")
    rc = main(["evaluate", "--est", str(tmp_path / "a.csv"), "--ref", str(tmp_path / "b.csv"),
               "--mocap", str(tmp_path / "b.csv"), "--out", str(tmp_path / "r")])
    assert rc == 3


def test_evaluate_disjoint_times_exit_3(tmp_path):
    save_csv(_rich(100, 25), tmp_path / "a.csv")
    save_csv(_rich(100, 25, t0=50.0), tmp_path / "b.csv")
    rc = main(["evaluate", "--est", str(tmp_path / "a.csv"),
               "--ref", str(tmp_path / "b.csv"), "--out", str(tmp_path / "r")])
    assert rc == 3


def test_evaluate_missing_input_exit_6(tmp_path):
    save_csv(_rich(50, 26), tmp_path / "a.csv")
    rc = main(["evaluate", "--est", str(tmp_path / "a.csv"),
               "--ref", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "r")])
    assert rc == 6


def test_serve_replay_and_exit(tmp_path, capsys):
    wire, _ = _wire_file(tmp_path, n=5)
    rc = main(["serve", "--replay", str(wire), "--mocap-port", "0", "--hub-port", "0",
               "--rate", "0", "--run-seconds", "0.05"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "mocap stream on" in text and "hub on" in text


def test_serve_port_conflict_exit_7(tmp_path, capsys):
    wire, _ = _wire_file(tmp_path, n=2)
    blocker = socket.create_server(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    try:
        rc = main(["serve", "--replay", str(wire), "--mocap-port", str(port),
                   "--hub-port", "0", "--run-seconds", "0.01"])
        assert rc == 7
        rc = main(["serve", "--replay", str(wire), "--mocap-port", "0",
                   "--hub-port", str(port), "--run-seconds", "0.01"])
        assert rc == 7
    finally:
        blocker.close()


def test_serve_missing_replay_exit_6(tmp_path):
    assert main(["serve", "--replay", str(tmp_path / "nope.bin"),
                 "--mocap-port", "0", "--hub-port", "0"]) == 6


def test_env_port_overrides_default(monkeypatch):
    monkeypatch.setenv("COTRACK_MOCAP_PORT", "45678")
    args = _build_parser().parse_args(["serve"])
    assert args.mocap_port == 45678


def test_env_port_rejects_garbage(monkeypatch, capsys):
    monkeypatch.setenv("COTRACK_HUB_PORT", "not-a-port")
    assert main(["serve"]) == 2
    assert "COTRACK_HUB_PORT" in capsys.readouterr().err
