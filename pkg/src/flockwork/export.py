"""Trajectory and metric export: lossless text trajectories, SVG plots, CSVs.

Trajectory files are line-delimited: a few '#'-prefixed header lines (format
version, config, seed, status, the full-precision initial state as JSON, and
the column names), then one whitespace-separated row per executed step.
Row t carries the leader at t, the post-step state p_t / v_t, and the
controls and expert terms that produced it. Floats are written with repr,
so parsing reproduces every value bit-exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig, canonical_json
from .core import leader_at
from .evaluate import MetricsReport

TRAJECTORY_FORMAT = "flockwork-trajectory"
TRAJECTORY_VERSION = 1

_AXES = "xyz"


class TrajectoryError(RuntimeError):
    """Unreadable or malformed trajectory file."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _columns(n_robots: int, dim: int) -> list[str]:
    cols = ["step"]
    cols += [f"leader_p{_AXES[a]}" for a in range(dim)]
    cols += [f"leader_v{_AXES[a]}" for a in range(dim)]
    per_robot = ["p", "v", "u", "eu", "alpha", "beta", "gamma"]
    for i in range(n_robots):
        for field in per_robot:
            cols += [f"r{i}_{field}{_AXES[a]}" for a in range(dim)]
    return cols


def export_trajectory(record, path: str) -> None:
    config: SwarmConfig = record.config
    n, dim = record.states[0].positions.shape
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#{TRAJECTORY_FORMAT} v{TRAJECTORY_VERSION}\n")
            fh.write(f"#config {canonical_json(config)}\n")
            fh.write(f"#seed {json.dumps(list(record.seed_key))}\n")
            fh.write(f"#status {record.status.value}\n")
            fh.write("#initial " + json.dumps({
                "positions": record.states[0].positions.tolist(),
                "velocities": record.states[0].velocities.tolist(),
            }) + "\n")
            fh.write("#columns " + " ".join(_columns(n, dim)) + "\n")
            for t in range(1, len(record.states)):
                leader = leader_at(t, config)
                k = t - 1
                row = [str(t)]
                row += [_fmt(x) for x in leader.position]
                row += [_fmt(x) for x in leader.velocity]
                state = record.states[t]
                for i in range(n):
                    for arr in (state.positions[i], state.velocities[i],
                                record.applied[k, i], record.expert_u[k, i],
                                record.expert_alpha[k, i], record.expert_beta[k, i],
                                record.expert_gamma[k, i]):
                        row += [_fmt(x) for x in arr]
                fh.write(" ".join(row) + "\n")
    except OSError as exc:
        raise TrajectoryError(f"cannot write trajectory to {path}: {exc}")


@dataclass
class TrajectoryData:
    config: SwarmConfig
    seed_key: tuple
    status: str
    initial_positions: np.ndarray   # (N, D)
    initial_velocities: np.ndarray
    steps: np.ndarray               # (T,)
    leader_pos: np.ndarray          # (T, D)
    positions: np.ndarray           # (T, N, D) post-step states
    velocities: np.ndarray
    applied: np.ndarray             # (T, N, D)
    expert_u: np.ndarray


def load_trajectory(path: str) -> TrajectoryData:
    headers: dict[str, str] = {}
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, rest = line[1:].partition(" ")
                    headers[key] = rest
                else:
                    rows.append([float(x) for x in line.split()])
    except OSError as exc:
        raise TrajectoryError(f"cannot read trajectory from {path}: {exc}")
    if TRAJECTORY_FORMAT != headers.get("", TRAJECTORY_FORMAT) and \
            "config" not in headers:
        raise TrajectoryError(f"{path} is not a trajectory file")
    try:
        config = SwarmConfig.from_dict(json.loads(headers["config"]))
        initial = json.loads(headers["initial"])
        seed_key = tuple(json.loads(headers["seed"]))
    except (KeyError, json.JSONDecodeError) as exc:
        raise TrajectoryError(f"malformed trajectory header in {path}: {exc}")
    n, dim = config.n_robots, config.dim
    data = np.array(rows)
    if data.shape[1] != 1 + 2 * dim + 7 * dim * n:
        raise TrajectoryError(f"unexpected column count in {path}")
    body = data[:, 1 + 2 * dim:].reshape(len(rows), n, 7, dim)
    return TrajectoryData(
        config=config,
        seed_key=seed_key,
        status=headers.get("status", "unknown"),
        initial_positions=np.array(initial["positions"]),
        initial_velocities=np.array(initial["velocities"]),
        steps=data[:, 0].astype(int),
        leader_pos=data[:, 1:1 + dim],
        positions=body[:, :, 0, :],
        velocities=body[:, :, 1, :],
        applied=body[:, :, 2, :],
        expert_u=body[:, :, 3, :],
    )


def trajectory_metrics(traj: TrajectoryData) -> dict:
    """Recompute tau, end-of-episode velocity variance, and MAE from a file."""
    d = np.linalg.norm(
        traj.positions - traj.leader_pos[:, None, :], axis=2
    )
    v = traj.velocities[-1]
    centered = v - v.mean(axis=0)
    return {
        "tau": float(d.mean()),
        "vel_var": float((centered * centered).sum(axis=1).mean()),
        "mae": float(np.abs(traj.expert_u - traj.applied).mean()),
        "status": traj.status,
        "steps": int(traj.steps[-1]),
    }


def plot_trajectory_svg(record, path: str, size: int = 720) -> None:
    """Vector plot: one polyline per robot, dashed leader path, obstacle circles."""
    config: SwarmConfig = record.config
    pts = np.array([s.positions for s in record.states])   # (T+1, N, D)
    leader_path = np.array(
        [leader_at(t, config).position for t in range(len(record.states))]
    )
    xy = pts[..., :2]
    lx = leader_path[:, :2]
    all_x = np.concatenate([xy[..., 0].ravel(), lx[:, 0]])
    all_y = np.concatenate([xy[..., 1].ravel(), lx[:, 1]])
    for ob in config.obstacles:
        all_x = np.append(all_x, [ob.center[0] - ob.radius, ob.center[0] + ob.radius])
        all_y = np.append(all_y, [ob.center[1] - ob.radius, ob.center[1] + ob.radius])
    x0, x1 = float(all_x.min()), float(all_x.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    pad = 0.05 * max(x1 - x0, y1 - y0, 1e-9)
    x0, x1, y0, y1 = x0 - pad, x1 + pad, y0 - pad, y1 + pad
    scale = size / max(x1 - x0, y1 - y0)
    width = (x1 - x0) * scale
    height = (y1 - y0) * scale

    def to_px(x, y):
        return (x - x0) * scale, height - (y - y0) * scale   # y up

    def polyline_points(arr):
        return " ".join(f"{px:.2f},{py:.2f}" for px, py in
                        (to_px(x, y) for x, y in arr))

    n = xy.shape[1]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        f'<rect width="{width:.2f}" height="{height:.2f}" fill="white"/>',
    ]
    for ob in config.obstacles:
        cx, cy = to_px(ob.center[0], ob.center[1])
        lines.append(
            f'<circle class="obstacle" cx="{cx:.2f}" cy="{cy:.2f}" '
            f'r="{ob.radius * scale:.2f}" fill="#d9d9d9" stroke="#555"/>'
        )
    leader_pts = polyline_points(lx)
    lines.append(
        f'<path class="leader" d="M {leader_pts.replace(" ", " L ")}" '
        f'fill="none" stroke="#c22" stroke-dasharray="6,4" stroke-width="2"/>'
    )
    for i in range(n):
        hue = int(360 * i / max(n, 1))
        lines.append(
            f'<polyline class="robot" points="{polyline_points(xy[:, i])}" '
            f'fill="none" stroke="hsl({hue},60%,45%)" stroke-width="1.2"/>'
        )
    lines.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise TrajectoryError(f"cannot write plot to {path}: {exc}")


def write_metrics_csv(report: MetricsReport, rows: list[dict], path: str) -> None:
    """Summary line plus one row per trial."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        summary = report.to_dict()
        writer.writerow(summary.keys())
        writer.writerow("" if v is None else _fmt(v) if isinstance(v, float) else v
                        for v in summary.values())
        writer.writerow([])
        if rows:
            writer.writerow(rows[0].keys())
            for row in rows:
                writer.writerow(
                    "" if v is None else _fmt(v) if isinstance(v, float) else v
                    for v in row.values()
                )


def write_training_log_csv(log: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if not log:
            return
        writer.writerow(log[0].keys())
        for row in log:
            writer.writerow(
                _fmt(v) if isinstance(v, float) else v for v in row.values()
            )
