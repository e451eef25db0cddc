"""Trajectory metrics and report export.

ATE RMSE is computed in the shared world frame with NO pre-alignment
by default: residual misregistration between users is exactly the
quantity of interest here, unlike SLAM benchmarking where the frames
are arbitrary.  Pass aligned=True for the conventional best-fit
number.

Latency estimation cross-correlates the zero-mean per-frame
displacement VECTORS of the two trajectories on a common fixed-rate
grid.  Displacement magnitude (scalar speed) carries no timing
information for constant-speed paths such as a circle, so the vector
form is used; trajectories with near-constant displacement (standing
still, unaccelerated straight line) have no usable signal either way
and raise UndefinedCorrelationError.  Lag resolution is one frame;
positive lag means the second signal trails the first.
"""

import json
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .calib import MAX_DT_DEFAULT, associate_indices, umeyama_align
from .errors import InsufficientDataError, UndefinedCorrelationError
from .geom import apply_pose
from .trajectory import Trajectory, positions_at, save_csv

SCHEMA_VERSION = 1
DEFAULT_MAX_LAG = 50


@dataclass(frozen=True)
class LatencyEstimate:
    """Integer-frame lag of signal b behind signal a, and its time value."""

    lag_frames: int
    latency: float
    peak_correlation: float
    tie: bool = False

    def __iter__(self):
        return iter((self.lag_frames, self.latency))


def ate_rmse(est: Trajectory, ref: Trajectory, max_dt: float = MAX_DT_DEFAULT,
             aligned: bool = False) -> float:
    """RMSE of Euclidean position error over timestamp-associated pairs."""
    ia, ib = associate_indices(est, ref, max_dt)
    if len(ia) < 2:
        raise InsufficientDataError(
            f"only {len(ia)} associated pairs; at least 2 required"
        )
    pa = est.pos[ia]
    pb = ref.pos[ib]
    if aligned:
        pa = apply_pose(umeyama_align(pa, pb), pa)
    d = pa - pb
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", d, d))))


def ate_series(est: Trajectory, ref: Trajectory, max_dt: float = MAX_DT_DEFAULT):
    """Paired times and per-axis errors (est - ref), for error plots."""
    ia, ib = associate_indices(est, ref, max_dt)
    if len(ia) < 2:
        raise InsufficientDataError(
            f"only {len(ia)} associated pairs; at least 2 required"
        )
    return est.t[ia], est.pos[ia] - ref.pos[ib]


def _displacements(traj: Trajectory, times: np.ndarray) -> np.ndarray:
    pos = positions_at(traj, times)
    d = np.diff(pos, axis=0)
    return d - d.mean(axis=0)


def estimate_latency(sig_a: Trajectory, sig_b: Trajectory, rate: float = 100.0,
                     max_lag_frames: int = DEFAULT_MAX_LAG) -> LatencyEstimate:
    """Cross-correlation delay of sig_b relative to sig_a, in whole frames.

    Both trajectories are resampled to a shared grid at `rate` over
    their common time span before correlating.
    """
    if max_lag_frames < 0:
        raise ValueError("max_lag_frames must be non-negative")
    t0 = max(sig_a.t[0], sig_b.t[0])
    t1 = min(sig_a.t[-1], sig_b.t[-1])
    n = int(math.floor((t1 - t0) * rate)) + 1
    if n - 1 <= 2 * max_lag_frames:
        raise InsufficientDataError(
            f"common span of {n} frames cannot resolve lags up to {max_lag_frames}"
        )
    times = t0 + np.arange(n) / rate
    a = _displacements(sig_a, times)
    b = _displacements(sig_b, times)
    m = len(a)
    for name, sig in (("a", a), ("b", b)):
        if float(np.sum(sig * sig)) / m < 1e-12:
            raise UndefinedCorrelationError(
                f"signal {name} is near-constant; correlation undefined"
            )
    lags = np.arange(-max_lag_frames, max_lag_frames + 1)
    corr = np.empty(len(lags))
    # normalized per overlap window, so shrinking overlap at larger lags
    # cannot outweigh a slowly decaying autocorrelation
    for k, lag in enumerate(lags):
        if lag >= 0:
            wa, wb = a[: m - lag], b[lag:]
        else:
            wa, wb = a[-lag:], b[: m + lag]
        den = math.sqrt(float(np.sum(wa * wa)) * float(np.sum(wb * wb)))
        corr[k] = float(np.sum(wa * wb)) / den if den > 0.0 else 0.0
    peak = corr.max()
    candidates = lags[corr == peak]
    tie = len(candidates) > 1
    lag = int(min(candidates, key=lambda v: (abs(v), v)))
    return LatencyEstimate(lag, lag / rate, float(peak), tie)


@dataclass
class MetricsReport:
    """Everything one evaluation run reports; serialized by export_report."""

    scenario: str
    seed: int
    ate_rmse: float
    sample_count: int
    ate_rmse_compensated: float | None = None
    ate_rmse_aligned: float | None = None
    latency: LatencyEstimate | None = None
    error_times: np.ndarray | None = None
    error_series: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _report_dict(report: MetricsReport, files: dict) -> dict:
    metrics = {
        "ate_rmse_m": float(report.ate_rmse),
        "sample_count": int(report.sample_count),
    }
    if report.ate_rmse_compensated is not None:
        metrics["ate_rmse_latency_compensated_m"] = float(report.ate_rmse_compensated)
    if report.ate_rmse_aligned is not None:
        metrics["ate_rmse_aligned_m"] = float(report.ate_rmse_aligned)
    if report.latency is not None:
        metrics["latency"] = {
            "lag_frames": int(report.latency.lag_frames),
            "latency_s": float(report.latency.latency),
            "peak_correlation": float(report.latency.peak_correlation),
            "tie": bool(report.latency.tie),
        }
    metrics.update(report.extra)
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": report.scenario,
        "seed": int(report.seed),
        "metrics": metrics,
        "config": report.config,
        "files": files,
    }


def _style(name: str) -> dict:
    if name.endswith("_ref") or name == "ref":
        return {"linestyle": "--", "linewidth": 1.0}
    return {"linestyle": "-", "linewidth": 1.2}


def _plot_topdown(trajs: dict, path, title: str, salt: str):
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = salt
    fig, ax = plt.subplots(figsize=(6, 6))
    for name in sorted(trajs):
        p = trajs[name].pos
        ax.plot(p[:, 0], p[:, 2], label=name, **_style(name))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_3d(trajs: dict, path, title: str, salt: str):
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = salt
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    for name in sorted(trajs):
        p = trajs[name].pos
        ax.plot(p[:, 0], p[:, 2], p[:, 1], label=name, **_style(name))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_zlabel("y [m]")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export_report(report: MetricsReport, trajectories: dict, out_dir,
                  contact_times=(), event_window: float = 3.0) -> list:
    """Write metrics JSON, per-trajectory CSVs, and SVG plots.

    File names are {scenario}_{seed}_*; identical inputs produce
    byte-identical files.  With no trajectories only the JSON is
    written.  Each contact time additionally gets a windowed top-down
    and 3D plot pair.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = f"{report.scenario}_{report.seed}"
    files = {}
    written = []

    def _register(key, path):
        files[key] = path.name
        written.append(path)

    try:
        for name in sorted(trajectories):
            path = out / f"{base}_{name}.csv"
            save_csv(trajectories[name], path)
            _register(f"trajectory_{name}", path)

        if report.error_series is not None:
            path = out / f"{base}_errors.csv"
            header = "t,ex,ey,ez"
            rows = np.column_stack([report.error_times, report.error_series])
            lines = [header] + [",".join(repr(float(v)) for v in row) for row in rows]
            path.write_text("\n".join(lines) + "\n")
            _register("error_series", path)

        if trajectories:
            path = out / f"{base}_topdown.svg"
            _plot_topdown(trajectories, path, base, base)
            _register("plot_topdown", path)

        for k, tc in enumerate(contact_times):
            window = {
                name: traj.time_slice(tc - event_window, tc + event_window)
                for name, traj in sorted(trajectories.items())
            }
            window = {n: t for n, t in window.items() if len(t) > 1}
            if not window:
                continue
            for kind, plot in (("topdown", _plot_topdown), ("3d", _plot_3d)):
                path = out / f"{base}_event{k}_{kind}.svg"
                plot(window, path, f"{base} event {k}", f"{base}_event{k}")
                _register(f"plot_event{k}_{kind}", path)

        path = out / f"{base}_metrics.json"
        payload = _report_dict(report, files)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.insert(0, path)
    except OSError as e:
        raise OSError(f"cannot write report files under {out}: {e}") from e
    return written
