"""Run configuration: YAML schema, strict validation, reproducible echo.

Unknown keys are rejected rather than ignored so a typo cannot
silently fall back to a default.  Angles in files are degrees where
the key says so (_deg); everything else is SI (meters, seconds,
radians).  Sub-config seeds default to the top-level seed; the
consumers already draw from per-purpose RNG streams.
"""

import math
from dataclasses import dataclass, field

import yaml

from .align import CorrectionConfig
from .errors import ConfigError
from .geom import Pose, quat_from_yaw
from .sim import DriftConfig, MocapObserverConfig, MotionSpec, TrackingLoss


@dataclass(frozen=True)
class RunConfig:
    scenario: MotionSpec = field(default_factory=MotionSpec)
    drift: DriftConfig = field(default_factory=DriftConfig)
    mocap: MocapObserverConfig = field(default_factory=MocapObserverConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    users: int = 1
    seed: int = 0
    output_dir: str = "out"
    latency_compensation: str | int = "auto"

    def __post_init__(self):
        if self.users < 1:
            raise ConfigError("users must be at least 1")
        lc = self.latency_compensation
        if not (lc in ("auto", "off") or (isinstance(lc, int) and lc >= 0)):
            raise ConfigError(
                "latency_compensation must be 'auto', 'off', or a non-negative frame count"
            )


def _check_keys(section: str, data: dict, allowed):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _number(section, key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    return float(value)


def _integer(section, key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    return value


def _build(section, data, spec, cls):
    """spec: key -> converter(value); builds cls(**converted)."""
    _check_keys(section, data, spec)
    kwargs = {}
    for key, value in data.items():
        name, converted = spec[key](key, value)
        kwargs[name] = converted
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid {section}: {e}") from e


def _scenario_from_dict(data: dict) -> MotionSpec:
    sec = "scenario"
    conv = {
        "kind": lambda k, v: (k, str(v)),
        "extent": lambda k, v: (k, _number(sec, k, v)),
        "speed": lambda k, v: (k, _number(sec, k, v)),
        "duration": lambda k, v: (k, _number(sec, k, v)),
        "rate": lambda k, v: (k, _number(sec, k, v)),
        "head_height": lambda k, v: (k, _number(sec, k, v)),
    }
    return _build(sec, data, conv, MotionSpec)


def _tracking_loss_from_dict(data: dict) -> TrackingLoss:
    sec = "drift.tracking_loss"
    _check_keys(sec, data, ("time", "jump"))
    if "time" not in data or "jump" not in data:
        raise ConfigError(f"{sec} needs both time and jump")
    jump = data["jump"]
    if not isinstance(jump, dict):
        raise ConfigError(f"{sec}.jump must be a mapping")
    _check_keys(f"{sec}.jump", jump, ("position", "yaw_deg"))
    pos = jump.get("position", [0.0, 0.0, 0.0])
    if not (isinstance(pos, (list, tuple)) and len(pos) == 3):
        raise ConfigError(f"{sec}.jump.position must be a 3-element list")
    yaw = math.radians(_number(f"{sec}.jump", "yaw_deg", jump.get("yaw_deg", 0.0)))
    pose = Pose(quat_from_yaw(yaw), [float(v) for v in pos])
    return TrackingLoss(_number(sec, "time", data["time"]), pose)


def _drift_from_dict(data: dict, default_seed: int) -> DriftConfig:
    sec = "drift"
    conv = {
        "mode": lambda k, v: (k, str(v)),
        "position_drift_rate": lambda k, v: (k, _number(sec, k, v)),
        "yaw_drift_rate": lambda k, v: (k, _number(sec, k, v)),
        "white_noise_pos": lambda k, v: (k, _number(sec, k, v)),
        "seed": lambda k, v: (k, _integer(sec, k, v)),
        "tracking_loss": lambda k, v: (k, _tracking_loss_from_dict(v)),
    }
    cfg = _build(sec, data, conv, DriftConfig)
    if "seed" not in data:
        cfg = DriftConfig(cfg.mode, cfg.position_drift_rate, cfg.yaw_drift_rate,
                          cfg.white_noise_pos, cfg.tracking_loss, default_seed)
    return cfg


def _mocap_from_dict(data: dict, default_seed: int) -> MocapObserverConfig:
    sec = "mocap"
    conv = {
        "rate": lambda k, v: (k, _number(sec, k, v)),
        "noise_pos": lambda k, v: (k, _number(sec, k, v)),
        "noise_rot": lambda k, v: (k, _number(sec, k, v)),
        "latency_frames": lambda k, v: (k, _integer(sec, k, v)),
        "jitter_frames": lambda k, v: (k, _integer(sec, k, v)),
        "seed": lambda k, v: (k, _integer(sec, k, v)),
    }
    cfg = _build(sec, data, conv, MocapObserverConfig)
    if "seed" not in data:
        cfg = MocapObserverConfig(cfg.rate, cfg.noise_pos, cfg.noise_rot,
                                  cfg.latency_frames, cfg.jitter_frames, default_seed)
    return cfg


def _correction_from_dict(data: dict) -> CorrectionConfig:
    sec = "correction"
    conv = {
        "position_threshold": lambda k, v: (k, _number(sec, k, v)),
        "yaw_threshold_deg": lambda k, v: ("yaw_threshold", math.radians(_number(sec, k, v))),
        "sustain_frames": lambda k, v: (k, _integer(sec, k, v)),
        "mode": lambda k, v: (k, str(v)),
        "smooth_duration": lambda k, v: (k, _number(sec, k, v)),
    }
    return _build(sec, data, conv, CorrectionConfig)


_TOP_KEYS = ("scenario", "drift", "mocap", "correction", "users", "seed",
             "output_dir", "latency_compensation")


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", data, _TOP_KEYS)
    for key in ("scenario", "drift", "mocap", "correction"):
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"{key} must be a mapping")
    seed = _integer("config", "seed", data.get("seed", 0))
    users = _integer("config", "users", data.get("users", 1))
    lc = data.get("latency_compensation", "auto")
    if isinstance(lc, str) and lc not in ("auto", "off"):
        raise ConfigError(f"latency_compensation must be auto, off, or an integer, got {lc!r}")
    out_dir = data.get("output_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir must be a string")
    try:
        return RunConfig(
            scenario=_scenario_from_dict(data.get("scenario", {})),
            drift=_drift_from_dict(data.get("drift", {}), seed),
            mocap=_mocap_from_dict(data.get("mocap", {}), seed),
            correction=_correction_from_dict(data.get("correction", {})),
            users=users,
            seed=seed,
            output_dir=out_dir,
            latency_compensation=lc,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if data is None:
        data = {}
    return run_config_from_dict(data)


def run_config_to_dict(cfg: RunConfig) -> dict:
    """Plain-type echo of the effective settings, for report embedding.

    output_dir is deliberately omitted: artifact bytes must not depend
    on where they are written, and the location is evident from the
    file's own path.
    """
    loss = cfg.drift.tracking_loss
    drift = {
        "mode": cfg.drift.mode,
        "position_drift_rate": cfg.drift.position_drift_rate,
        "yaw_drift_rate": cfg.drift.yaw_drift_rate,
        "white_noise_pos": cfg.drift.white_noise_pos,
        "seed": cfg.drift.seed,
        "tracking_loss": None if loss is None else {
            "time": loss.time,
            "jump": {
                "position": [float(v) for v in loss.jump.t],
                "quat": [float(v) for v in loss.jump.q],
            },
        },
    }
    return {
        "scenario": {
            "kind": cfg.scenario.kind,
            "extent": cfg.scenario.resolved_extent(),
            "speed": cfg.scenario.speed,
            "duration": cfg.scenario.duration,
            "rate": cfg.scenario.rate,
            "head_height": cfg.scenario.head_height,
        },
        "drift": drift,
        "mocap": {
            "rate": cfg.mocap.rate,
            "noise_pos": cfg.mocap.noise_pos,
            "noise_rot": cfg.mocap.noise_rot,
            "latency_frames": cfg.mocap.latency_frames,
            "jitter_frames": cfg.mocap.jitter_frames,
            "seed": cfg.mocap.seed,
        },
        "correction": {
            "position_threshold": cfg.correction.position_threshold,
            "yaw_threshold": cfg.correction.yaw_threshold,
            "sustain_frames": cfg.correction.sustain_frames,
            "mode": cfg.correction.mode,
            "smooth_duration": cfg.correction.smooth_duration,
        },
        "users": cfg.users,
        "seed": cfg.seed,
        "latency_compensation": cfg.latency_compensation,
    }
