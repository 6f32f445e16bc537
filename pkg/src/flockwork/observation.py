"""Decentralized per-robot observations and the rolling history window.

Each robot's feature row is three concatenated blocks of width 3*D:
a mean over 1-hop neighbors of peer relative states, a sum of relative
states to in-range obstacle projections, and the relative state to the
virtual leader. The relative state of i with respect to j is

    [v_i - v_j,  (p_i - p_j)/r,  (p_i - p_j)/r^2].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig
from .core import LeaderState, SwarmState
from .expert import CoincidentRobotsError, ObstacleProjectionError

LEADER_DISTANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class ObservationFrame:
    """All robots' local features plus the graph snapshot at one step."""

    time_step: int
    features: np.ndarray                  # (N, 9*D)
    edges: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class History:
    """The last L+1 observation frames, oldest first."""

    frames: tuple[ObservationFrame, ...]

    @property
    def horizon(self) -> int:
        return len(self.frames) - 1

    @classmethod
    def seed(cls, frame: ObservationFrame, horizon: int) -> "History":
        """Cold start: replicate the first frame across the whole window."""
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        return cls(frames=(frame,) * (horizon + 1))


def push_history(history: History, frame: ObservationFrame) -> History:
    last = history.frames[-1]
    if frame.time_step != last.time_step + 1:
        raise ValueError(
            f"non-consecutive frame: got t={frame.time_step}, "
            f"window ends at t={last.time_step}"
        )
    return History(frames=history.frames[1:] + (frame,))


def relative_state(
    p_i: np.ndarray, v_i: np.ndarray, p_j: np.ndarray, v_j: np.ndarray
) -> np.ndarray:
    diff = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    r = np.linalg.norm(diff)
    if r == 0.0:
        raise CoincidentRobotsError("relative state undefined for coincident points")
    return np.concatenate(
        [np.asarray(v_i, dtype=float) - np.asarray(v_j, dtype=float),
         diff / r, diff / r**2]
    )


def aggregate_alpha(state: SwarmState) -> np.ndarray:
    """Mean relative state over each robot's 1-hop neighbors (zero if none)."""
    p, v = state.positions, state.velocities
    n, dim = p.shape
    out = np.zeros((n, 3 * dim))
    nbrs = state.neighbor_lists()
    for i in range(n):
        js = nbrs[i]
        if not js:
            continue
        diff = p[i] - p[js]
        r = np.linalg.norm(diff, axis=1)
        if (r == 0.0).any():
            raise CoincidentRobotsError("coincident neighbors in aggregate_alpha")
        block = np.concatenate(
            [v[i] - v[js], diff / r[:, None], diff / (r * r)[:, None]], axis=1
        )
        out[i] = block.mean(axis=0)
    return out


def aggregate_beta(state: SwarmState, config: SwarmConfig) -> np.ndarray:
    """Sum of relative states to in-range obstacle projections (plain sum)."""
    p, v = state.positions, state.velocities
    n, dim = p.shape
    out = np.zeros((n, 3 * dim))
    for ob in config.obstacles:
        center = np.asarray(ob.center, dtype=float)
        rel = p - center
        d = np.linalg.norm(rel, axis=1)
        if (d <= ob.radius).any():
            raise ObstacleProjectionError("robot inside obstacle in aggregate_beta")
        r_surf = d - ob.radius
        active = r_surf < config.comm_range
        if not active.any():
            continue
        if (r_surf[active] == 0.0).any():
            raise CoincidentRobotsError("robot exactly on obstacle surface")
        idx = np.where(active)[0]
        a = rel[idx] / d[idx, None]
        mu = ob.radius / d[idx]
        v_beta = mu[:, None] * (v[idx] - a * (a * v[idx]).sum(axis=1, keepdims=True))
        diff = a * r_surf[idx, None]
        r = r_surf[idx]
        out[idx] += np.concatenate(
            [v[idx] - v_beta, diff / r[:, None], diff / (r * r)[:, None]], axis=1
        )
    return out


def leader_observation(state: SwarmState, leader: LeaderState) -> np.ndarray:
    """Relative state to the leader, with a distance floor at coincidence.

    The leader is virtual, so a robot may legally sit on it; the floor keeps
    the direction blocks finite (exactly zero at exact coincidence).
    """
    diff = state.positions - leader.position
    r = np.linalg.norm(diff, axis=1)
    r_eff = np.maximum(r, LEADER_DISTANCE_FLOOR)
    return np.concatenate(
        [state.velocities - leader.velocity,
         diff / r_eff[:, None], diff / (r_eff * r_eff)[:, None]], axis=1
    )


def build_frame(
    state: SwarmState, leader: LeaderState, config: SwarmConfig
) -> ObservationFrame:
    features = np.concatenate(
        [aggregate_alpha(state),
         aggregate_beta(state, config),
         leader_observation(state, leader)], axis=1
    )
    return ObservationFrame(
        time_step=state.time_step, features=features, edges=state.edges
    )
