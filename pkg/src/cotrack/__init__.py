"""Hybrid co-located VR tracking: mocap-anchored alignment of inside-out
tracked devices, with a deterministic simulator, wire protocol, and
evaluation tools."""

from .align import (
    AlignmentState,
    CorrectionConfig,
    Residual,
    correction_step,
    drift_residual,
    eye_world,
    solve_origin_full,
    solve_origin_leveled,
)
from .calib import (
    CalibrationResult,
    Extrinsics,
    associate,
    associate_indices,
    calibrate,
    estimate_extrinsics,
    umeyama_align,
)
from .config import RunConfig, load_run_config, run_config_from_dict, run_config_to_dict
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
    UnregisteredUserError,
)
from .evaluate import (
    LatencyEstimate,
    MetricsReport,
    ate_rmse,
    ate_series,
    estimate_latency,
    export_report,
)
from .geom import (
    Pose,
    compose,
    convert_handedness,
    convert_quat,
    convert_vector,
    geodesic_angle,
    inverse,
    apply_pose,
    pose_error,
    quat_from_axis_angle,
    quat_from_rotvec,
    quat_from_yaw,
    quat_mul,
    quat_normalize,
    quat_rotate,
    slerp,
    wrap_angle,
    yaw_of,
    yaw_only,
)
from .net import (
    BodyEntry,
    HubClient,
    HubServer,
    MocapStreamServer,
    PacketDecoder,
    PoseHub,
    RigidBodyPacket,
    SessionState,
    SharedPoseMessage,
    decode_packet,
    encode_packet,
    hub_poll,
    hub_publish,
    is_corrupt,
    is_placeholder,
    session_step,
)
from .runner import RunResult, UserRunLog, simulate_run, write_outputs
from .sim import (
    ContactEvent,
    DriftConfig,
    DriftTrack,
    MocapObservation,
    MocapObserverConfig,
    MotionSet,
    MotionSpec,
    TrackingLoss,
    UserMotion,
    apply_drift,
    gen_drift,
    gen_motion,
    mocap_observe,
    slam_track,
    track_rig,
)
from .trajectory import (
    Trajectory,
    TrajectorySample,
    convert_traj_handedness,
    load_csv,
    positions_at,
    save_csv,
    transform_local,
    transform_world,
)

__version__ = "0.1.0"
