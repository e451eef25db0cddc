"""Command-line entry points.

Subcommands: calibrate, simulate, serve, evaluate, replay.  Exit codes:

  0  success
  2  configuration or usage error
  3  insufficient data or unusable signal
  4  degenerate geometry (including undefined yaw)
  5  inconsistent calibration data
  6  I/O failure (missing or unreadable files)
  7  server port could not be bound
  8  malformed wire data

COTRACK_MOCAP_PORT and COTRACK_HUB_PORT override the default serve
ports; no other environment variables are read.
"""

import argparse
import json
import os
import pathlib
import sys
import time
from dataclasses import replace

import numpy as np

from . import net
from .calib import MAX_DT_DEFAULT, MIN_PAIRS_DEFAULT, calibrate
from .config import RunConfig, load_run_config, run_config_to_dict
from .errors import (
    ConfigError,
    CotrackError,
    DegenerateGeometryError,
    InconsistentDataError,
    InsufficientDataError,
    MalformedFrameError,
    PortBindError,
    UndefinedCorrelationError,
    UndefinedYawError,
)
from .evaluate import MetricsReport, ate_rmse, ate_series, estimate_latency, export_report
from .runner import simulate_run, write_outputs
from .trajectory import Trajectory, convert_traj_handedness, load_csv, save_csv

_EXIT_CODES = (
    (ConfigError, 2),
    (InsufficientDataError, 3),
    (UndefinedCorrelationError, 3),
    (DegenerateGeometryError, 4),
    (UndefinedYawError, 4),
    (InconsistentDataError, 5),
    (PortBindError, 7),
    (MalformedFrameError, 8),
)


def _load_traj(path) -> Trajectory:
    try:
        return load_csv(path)
    except (OSError, ValueError) as e:
        raise _IOFailure(str(e)) from e


class _IOFailure(Exception):
    pass


def cmd_calibrate(args) -> int:
    mocap = _load_traj(args.mocap_csv)
    eye = _load_traj(args.eye_csv)
    if args.convert_mocap:
        mocap = convert_traj_handedness(mocap)
    result = calibrate(mocap, eye, max_dt=args.max_dt, min_pairs=args.min_pairs,
                       pre_align=args.pre_align)
    ext = result.extrinsics
    payload = {
        "transform": {
            "quat": [float(v) for v in ext.transform.q],
            "position": [float(v) for v in ext.transform.t],
        },
        "rms_position_residual_m": ext.rms_position_residual,
        "rms_rotation_residual_rad": ext.rms_rotation_residual,
        "sample_count": ext.sample_count,
        "pair_count": result.pair_count,
    }
    out = pathlib.Path(args.out)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"extrinsics written to {out} "
          f"({result.pair_count} pairs, rms {ext.rms_position_residual:.2e} m "
          f"/ {ext.rms_rotation_residual:.2e} rad)")
    return 0


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config is not None else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "output_dir", None) is not None:
        overrides["output_dir"] = args.output_dir
    if getattr(args, "users", None) is not None:
        overrides["users"] = args.users
    new_seed = overrides.get("seed")
    if new_seed is not None:
        # sub-seeds that followed the top-level seed keep following it
        if cfg.drift.seed == cfg.seed:
            overrides["drift"] = replace(cfg.drift, seed=new_seed)
        if cfg.mocap.seed == cfg.seed:
            overrides["mocap"] = replace(cfg.mocap, seed=new_seed)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    result = simulate_run(cfg, enable_correction=not args.no_correction)
    files = write_outputs(result, cfg.output_dir)
    for log in result.users:
        ate = ate_rmse(log.est_head, log.gt_head)
        started = sum(1 for e in log.events if e["type"] == "correction_started")
        lat = "n/a"
        if log.latency is not None:
            lat = f"{log.latency.latency * 1e3:.0f} ms ({log.latency.lag_frames} frames)"
        print(f"user {log.user_id}: ate_rmse {ate:.4f} m, "
              f"{started} corrections, latency estimate {lat}")
    print(f"{len(files)} files written to {cfg.output_dir}")
    return 0


def cmd_serve(args) -> int:
    if args.replay is not None:
        try:
            data = pathlib.Path(args.replay).read_bytes()
        except OSError as e:
            raise _IOFailure(str(e)) from e
        frames = net.split_stream(data)
    else:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        from .geom import inverse
        from .runner import DEFAULT_RIG_OFFSET, _build_stream
        from .sim import gen_motion, mocap_observe

        motion = gen_motion(cfg.scenario, cfg.users)
        obs = mocap_observe(motion.users[0].head, inverse(DEFAULT_RIG_OFFSET), cfg.mocap)
        _, wire = _build_stream(obs, 1)
        frames = net.split_stream(wire)

    mocap_srv = net.MocapStreamServer(args.host, args.mocap_port, frames, rate=args.rate)
    try:
        hub_srv = net.HubServer(args.host, args.hub_port)
    except PortBindError:
        mocap_srv.stop()
        raise
    mocap_srv.start()
    hub_srv.start()
    print(f"mocap stream on {args.host}:{mocap_srv.port} "
          f"({len(frames)} frames at {args.rate or 'unpaced'} Hz), "
          f"hub on {args.host}:{hub_srv.port}")
    try:
        deadline = None if args.run_seconds is None else time.monotonic() + args.run_seconds
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.05)
            if deadline is None and mocap_srv.done():
                break
    except KeyboardInterrupt:
        pass
    finally:
        mocap_srv.stop()
        hub_srv.stop()
    print(f"served {mocap_srv.frames_sent} frames")
    return 0


def cmd_evaluate(args) -> int:
    est = _load_traj(args.est)
    ref = _load_traj(args.ref)
    ate = ate_rmse(est, ref, max_dt=args.max_dt)
    times, errors = ate_series(est, ref, max_dt=args.max_dt)
    report = MetricsReport(
        scenario=args.scenario,
        seed=args.seed,
        ate_rmse=ate,
        sample_count=len(times),
        error_times=times,
        error_series=errors,
    )
    if args.aligned:
        report.ate_rmse_aligned = ate_rmse(est, ref, max_dt=args.max_dt, aligned=True)
    trajectories = {"est": est, "ref": ref}
    if args.mocap is not None:
        mocap_eye = _load_traj(args.mocap)
        trajectories["mocap_eye"] = mocap_eye
        latency = estimate_latency(est, mocap_eye, rate=args.rate,
                                   max_lag_frames=args.max_lag)
        report.latency = latency
        report.extra["ate_vs_mocap_uncompensated_m"] = float(ate_rmse(est, mocap_eye))
        shifted = Trajectory(
            mocap_eye.t - latency.lag_frames / args.rate,
            mocap_eye.pos, mocap_eye.quat, mocap_eye.rate,
        )
        report.ate_rmse_compensated = float(ate_rmse(est, shifted))
    contact_times = []
    if args.contacts is not None:
        try:
            payload = json.loads(pathlib.Path(args.contacts).read_text())
        except OSError as e:
            raise _IOFailure(str(e)) from e
        contact_times = [float(c["t"]) for c in payload]
    files = export_report(report, trajectories, args.out, contact_times)
    print(f"ate_rmse {ate:.4f} m over {len(times)} pairs")
    if report.latency is not None:
        print(f"latency estimate {report.latency.latency * 1e3:.0f} ms "
              f"({report.latency.lag_frames} frames)")
    print(f"{len(files)} files written to {args.out}")
    return 0


def cmd_replay(args) -> int:
    try:
        data = pathlib.Path(args.wire).read_bytes()
    except OSError as e:
        raise _IOFailure(str(e)) from e
    decoder = net.PacketDecoder()
    packets = [m for m in decoder.feed(data) if isinstance(m, net.RigidBodyPacket)]
    if decoder.pending_bytes:
        raise MalformedFrameError(f"{decoder.pending_bytes} trailing bytes are not a frame")
    placeholders = 0
    times = []
    poses = []
    for p in packets:
        for b in p.bodies:
            if b.body_id != args.body_id:
                continue
            if net.is_placeholder(b):
                placeholders += 1
            elif not net.is_corrupt(b):
                times.append(p.timestamp_us * 1e-6)
                poses.append(b.to_pose())
    print(f"{len(packets)} packets, {placeholders} placeholders, "
          f"{len(poses)} poses for body {args.body_id}")
    if args.out is not None:
        if len(poses) < 2:
            raise InsufficientDataError("fewer than 2 decodable poses; nothing to write")
        traj = Trajectory(
            np.array(times),
            np.stack([p.t for p in poses]),
            np.stack([p.q for p in poses]),
        )
        save_csv(traj, args.out)
        print(f"trajectory written to {args.out}")
    return 0


def _env_port(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotrack",
        description="hybrid mocap + inside-out VR tracking pipeline tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate body-to-eye extrinsics from two trajectory CSVs")
    p.add_argument("mocap_csv")
    p.add_argument("eye_csv")
    p.add_argument("--out", default="extrinsics.json")
    p.add_argument("--max-dt", type=float, default=MAX_DT_DEFAULT)
    p.add_argument("--min-pairs", type=int, default=MIN_PAIRS_DEFAULT)
    p.add_argument("--pre-align", action="store_true",
                   help="fit a rigid world alignment before estimating")
    p.add_argument("--convert-mocap", action="store_true",
                   help="treat the mocap CSV as RH Z-up and convert it first")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run the end-to-end synthetic pipeline")
    p.add_argument("--config", help="YAML run config (defaults used when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--no-correction", action="store_true",
                   help="freeze the origin after the initial alignment")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="serve a mocap packet stream and the pose hub")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mocap-port", type=int,
                   default=_env_port("COTRACK_MOCAP_PORT", net.DEFAULT_MOCAP_PORT))
    p.add_argument("--hub-port", type=int,
                   default=_env_port("COTRACK_HUB_PORT", net.DEFAULT_HUB_PORT))
    p.add_argument("--replay", help="serve frames from a captured wire file")
    p.add_argument("--config", help="YAML run config to generate a stream from")
    p.add_argument("--rate", type=float, default=100.0,
                   help="frame pacing in Hz (0 sends unpaced)")
    p.add_argument("--run-seconds", type=float, default=None,
                   help="stop after this long instead of running until interrupted")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="compute metrics and plots from trajectory CSVs")
    p.add_argument("--est", required=True, help="estimated trajectory CSV")
    p.add_argument("--ref", required=True, help="reference trajectory CSV")
    p.add_argument("--mocap", help="mocap-derived eye trajectory CSV (enables latency metrics)")
    p.add_argument("--contacts", help="contacts JSON for per-event plots")
    p.add_argument("--out", default="out")
    p.add_argument("--scenario", default="eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-dt", type=float, default=MAX_DT_DEFAULT)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--aligned", action="store_true",
                   help="additionally report best-fit aligned ATE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="decode a captured wire file")
    p.add_argument("wire")
    p.add_argument("--body-id", type=int, default=1)
    p.add_argument("--out", help="write the decoded body trajectory CSV here")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    try:
        # building the parser reads the port environment variables
        parser = _build_parser()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _IOFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 6
    except CotrackError as e:
        for etype, code in _EXIT_CODES:
            if isinstance(e, etype):
                print(f"error: {e}", file=sys.stderr)
                return code
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
