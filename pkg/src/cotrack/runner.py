"""End-to-end simulation runs.

Pipeline per user: generate ground truth, distort it through the drift
model (device camera track), observe the head through the mocap model,
encode/decode the observation stream through the wire protocol, drive
the session state machine, and keep the tracking-space origin aligned
with leveled solves plus the correction state machine.

Latency handling: every rigid-body packet carries its capture
timestamp, so the measured transport delay (arrival minus capture) is
known per packet.  latency_compensation selects how mocap samples are
paired with device camera samples:

  "auto"  pair at the packet's capture timestamp (measured delay);
  "off"   pair at arrival time (shows the full latency-induced error);
  integer pair at arrival minus that many mocap frames.

A cross-correlation estimate over the finished run is reported
alongside the measured delay as an independent cross-check.
"""

import json
import pathlib
from dataclasses import dataclass, field, replace

import numpy as np

from .align import (
    AlignmentState,
    correction_step,
    drift_residual,
    eye_world,
    solve_origin_leveled,
)
from .calib import Extrinsics
from .config import RunConfig, run_config_to_dict
from .errors import CotrackError
from .evaluate import LatencyEstimate, estimate_latency
from .geom import (
    Pose,
    compose,
    convert_handedness,
    inverse,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
)
from .net import (
    BodyEntry,
    PacketDecoder,
    PoseHub,
    RigidBodyPacket,
    SessionState,
    SharedPoseMessage,
    encode_packet,
    is_corrupt,
    is_placeholder,
    session_step,
)
from .sim import MocapObservation, gen_motion, mocap_observe, slam_track, track_rig
from .trajectory import Trajectory, save_csv

# marker body mounted on the headset: a few cm off the eye center,
# slightly rotated; the "true" extrinsics every run injects
DEFAULT_RIG_OFFSET = Pose(
    quat_from_rotvec([0.04, -0.02, 0.03]), [0.012, 0.085, -0.055]
)

DIAG_MAX_LAG = 30

_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class UserRunLog:
    user_id: int
    gt_head: Trajectory
    cam_head: Trajectory
    est_head: Trajectory
    mocap_eye: Trajectory | None
    origins_q: np.ndarray
    origins_t: np.ndarray
    wire_capture: bytes
    events: list
    session: SessionState
    observation: MocapObservation
    latency: LatencyEstimate | None = None
    transport_delay_mean: float | None = None
    first_align_t: float | None = None
    gt_ctrl: Trajectory | None = None
    cam_ctrl: Trajectory | None = None
    est_ctrl: Trajectory | None = None


@dataclass
class RunResult:
    config: RunConfig
    users: list
    contacts: list = field(default_factory=list)
    hub_capture: bytes = b""
    remote_views: list = field(default_factory=list)


def _build_stream(obs: MocapObservation, body_id: int):
    """Placeholder lead-in followed by the observed samples, encoded."""
    rate = obs.config.rate
    frames = []
    arrivals = []
    fn = 0
    for k in range(obs.config.latency_frames):
        t = k / rate
        pkt = RigidBodyPacket(fn, int(round(t * 1e6)), [BodyEntry.placeholder(body_id)])
        frames.append(encode_packet(pkt))
        arrivals.append(t)
        fn += 1
    traj = obs.trajectory
    for j in range(len(traj)):
        pkt = RigidBodyPacket(
            fn,
            int(round(float(obs.capture_t[j]) * 1e6)),
            [BodyEntry.from_pose(body_id, traj.pose(j))],
        )
        frames.append(encode_packet(pkt))
        arrivals.append(float(traj.t[j]))
        fn += 1
    return arrivals, b"".join(frames)


def _pair_index(traj: Trajectory, t: float) -> int:
    i = int(round((t - traj.t[0]) * traj.rate))
    return min(max(i, 0), len(traj) - 1)


def _apply_origins(origins_q, origins_t, traj: Trajectory) -> Trajectory:
    q = quat_normalize(quat_mul(origins_q, traj.quat))
    pos = quat_rotate(origins_q, traj.pos) + origins_t
    return Trajectory(traj.t.copy(), pos, q, traj.rate)


def _run_user(cfg: RunConfig, u: int, gt_head: Trajectory, gt_ctrl,
              rig_offset: Pose, enable_correction: bool) -> UserRunLog:
    user_id = u + 1
    drift_cfg = replace(cfg.drift, seed=cfg.drift.seed + u)
    mocap_cfg = replace(cfg.mocap, seed=cfg.mocap.seed + u)
    if gt_ctrl is not None:
        cam_head, cam_ctrl = track_rig([gt_head, gt_ctrl], drift_cfg)
    else:
        cam_head = slam_track(gt_head, drift_cfg)
        cam_ctrl = None

    obs = mocap_observe(gt_head, inverse(rig_offset), mocap_cfg)
    arrivals, wire = _build_stream(obs, user_id)
    packets = PacketDecoder().feed(wire)
    extrinsics = Extrinsics(rig_offset)

    session = SessionState(tracked_body_id=user_id)
    state = None
    events = []
    eye_times = []
    eye_quats = []
    eye_pos = []
    delays = []
    first_align_t = None
    mode = cfg.latency_compensation
    mrate = mocap_cfg.rate
    mdt = 1.0 / mrate

    n = len(cam_head)
    origins_q = np.tile(_IDENTITY_Q, (n, 1))
    origins_t = np.zeros((n, 3))

    j = 0
    n_packets = len(packets)
    for i in range(n):
        t_i = float(cam_head.t[i])
        while j < n_packets and arrivals[j] <= t_i + 1e-12:
            arrival = arrivals[j]
            packet = packets[j]
            j += 1
            session = session_step(session, packet)
            if not session.tracking:
                continue
            entry = next(
                (b for b in packet.bodies if b.body_id == user_id), None
            )
            if entry is None or is_placeholder(entry) or is_corrupt(entry):
                continue
            eye_w = eye_world(convert_handedness(entry.to_pose()), extrinsics)
            capture = packet.timestamp_us * 1e-6
            delays.append(arrival - capture)
            eye_times.append(arrival)
            eye_quats.append(eye_w.q)
            eye_pos.append(eye_w.t)

            if mode == "auto":
                pair_t = capture
            elif mode == "off":
                pair_t = arrival
            else:
                pair_t = arrival - mode / mrate
            cam_pose = cam_head.pose(_pair_index(cam_head, pair_t))
            target = solve_origin_leveled(eye_w, cam_pose)

            if state is None:
                state = AlignmentState(origin=target)
                first_align_t = arrival
                events.append({"type": "initial_align", "t": float(arrival)})
                continue
            if not enable_correction:
                continue
            cam_world = compose(state.origin, cam_pose)
            residual = drift_residual(cam_world, eye_w)
            prev_phase = state.phase
            state = correction_step(state, residual, target, cfg.correction, mdt)
            if prev_phase == "monitoring" and state.phase == "correcting":
                events.append({
                    "type": "correction_started",
                    "t": float(arrival),
                    "position_error": float(residual.position_error),
                    "yaw_error": float(residual.yaw_error),
                    "mode": cfg.correction.mode,
                })
            elif prev_phase == "correcting" and state.phase == "monitoring":
                events.append({"type": "correction_completed", "t": float(arrival)})
        if state is not None:
            origins_q[i] = state.origin.q
            origins_t[i] = state.origin.t

    est_head = _apply_origins(origins_q, origins_t, cam_head)
    est_ctrl = _apply_origins(origins_q, origins_t, cam_ctrl) if cam_ctrl is not None else None

    mocap_eye = None
    if len(eye_times) >= 2:
        mocap_eye = Trajectory(
            np.array(eye_times), np.stack(eye_pos), np.stack(eye_quats), mrate
        )
    latency = None
    if mocap_eye is not None:
        try:
            latency = estimate_latency(est_head, mocap_eye, mrate, DIAG_MAX_LAG)
        except CotrackError:
            latency = None

    return UserRunLog(
        user_id=user_id,
        gt_head=gt_head,
        cam_head=cam_head,
        est_head=est_head,
        mocap_eye=mocap_eye,
        origins_q=origins_q,
        origins_t=origins_t,
        wire_capture=wire,
        events=events,
        session=session,
        observation=obs,
        latency=latency,
        transport_delay_mean=float(np.mean(delays)) if delays else None,
        first_align_t=first_align_t,
        gt_ctrl=gt_ctrl,
        cam_ctrl=cam_ctrl,
        est_ctrl=est_ctrl,
    )


def _hub_exchange(users, contacts, rate):
    """All users publish every frame; polls are sampled at contact frames."""
    hub = PoseHub()
    for log in users:
        hub.register(log.user_id)
    capture = bytearray()
    contact_frames = {int(round(c.t * rate)) for c in contacts}
    remote_views = []
    n = min(len(log.est_head) for log in users)
    for i in range(n):
        for log in users:
            head = log.est_head.pose(i)
            right = log.est_ctrl.pose(i) if log.est_ctrl is not None else head
            # left hand is not simulated; it mirrors the head slot
            msg = SharedPoseMessage(log.user_id, i, head, head, right)
            hub.publish(msg)
            capture += msg.encode()
        if i in contact_frames:
            for log in users:
                for m in hub.poll(log.user_id):
                    remote_views.append({
                        "viewer": log.user_id,
                        "owner": m.user_id,
                        "frame": i,
                        "t": i / rate,
                        "right_hand_pos": [float(v) for v in m.right_hand.t],
                        "head_pos": [float(v) for v in m.head.t],
                    })
    return bytes(capture), remote_views


def simulate_run(cfg: RunConfig, rig_offset: Pose = DEFAULT_RIG_OFFSET,
                 enable_correction: bool = True) -> RunResult:
    """Run the full pipeline for every user in the config."""
    motion = gen_motion(cfg.scenario, cfg.users)
    users = [
        _run_user(cfg, u, um.head, um.right_controller, rig_offset, enable_correction)
        for u, um in enumerate(motion.users)
    ]
    hub_capture = b""
    remote_views = []
    if len(users) >= 2:
        hub_capture, remote_views = _hub_exchange(users, motion.contacts, cfg.scenario.rate)
    return RunResult(cfg, users, motion.contacts, hub_capture, remote_views)


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_outputs(result: RunResult, out_dir=None) -> dict:
    """Write every run artifact; file contents are byte-identical across
    repeated runs of the same config."""
    cfg = result.config
    out = pathlib.Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = f"{cfg.scenario.kind}_{cfg.seed}"
    files = {}

    def _put(key, path):
        files[key] = path

    user_summaries = []
    for log in result.users:
        uid = log.user_id
        trajs = {
            "gt_head": log.gt_head,
            "cam_head": log.cam_head,
            "est_head": log.est_head,
        }
        if log.mocap_eye is not None:
            trajs["mocap_eye"] = log.mocap_eye
        if log.gt_ctrl is not None:
            trajs["gt_ctrl"] = log.gt_ctrl
            trajs["est_ctrl"] = log.est_ctrl
        for name, traj in trajs.items():
            path = out / f"{base}_user{uid}_{name}.csv"
            save_csv(traj, path)
            _put(f"user{uid}_{name}", path)
        path = out / f"{base}_user{uid}_wire.bin"
        path.write_bytes(log.wire_capture)
        _put(f"user{uid}_wire", path)
        path = out / f"{base}_user{uid}_events.json"
        path.write_text(_json_text(log.events))
        _put(f"user{uid}_events", path)
        latency = None
        if log.latency is not None:
            latency = {
                "lag_frames": int(log.latency.lag_frames),
                "latency_s": float(log.latency.latency),
                "peak_correlation": float(log.latency.peak_correlation),
                "tie": bool(log.latency.tie),
            }
        user_summaries.append({
            "user_id": uid,
            "first_align_t": log.first_align_t,
            "transport_delay_mean_s": log.transport_delay_mean,
            "latency_estimate": latency,
            "corrections_started": sum(
                1 for e in log.events if e["type"] == "correction_started"
            ),
            "corrections_completed": sum(
                1 for e in log.events if e["type"] == "correction_completed"
            ),
            "session_phase": log.session.phase,
        })

    if result.contacts:
        path = out / f"{base}_contacts.json"
        payload = [
            {"t": float(c.t), "point": [float(v) for v in c.point]}
            for c in result.contacts
        ]
        path.write_text(_json_text(payload))
        _put("contacts", path)
    if result.hub_capture:
        path = out / f"{base}_hub.bin"
        path.write_bytes(result.hub_capture)
        _put("hub", path)
    if result.remote_views:
        path = out / f"{base}_remote_views.json"
        path.write_text(_json_text(result.remote_views))
        _put("remote_views", path)

    path = out / f"{base}_run.json"
    payload = {
        "schema_version": 1,
        "scenario": cfg.scenario.kind,
        "seed": cfg.seed,
        "config": run_config_to_dict(cfg),
        "users": user_summaries,
    }
    path.write_text(_json_text(payload))
    _put("run", path)
    return files
