"""Double-integrator stepping with per-axis clamping and termination checks."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig
from .core import SwarmState, make_state, min_pairwise_distance


class EpisodeStatus(enum.Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED_ROBOT_COLLISION = "failed_robot_collision"
    FAILED_OBSTACLE_COLLISION = "failed_obstacle_collision"

    @property
    def is_failure(self) -> bool:
        return self in (
            EpisodeStatus.FAILED_ROBOT_COLLISION,
            EpisodeStatus.FAILED_OBSTACLE_COLLISION,
        )


@dataclass(frozen=True)
class StepOutcome:
    next_state: SwarmState
    status: EpisodeStatus


def clamp_per_axis(x: np.ndarray, bound: float) -> np.ndarray:
    """Limit each component to [-bound, +bound]."""
    if not bound > 0:
        raise ValueError("bound must be > 0")
    return np.clip(x, -bound, bound)


def _any_obstacle_penetration(positions: np.ndarray, config: SwarmConfig) -> bool:
    for ob in config.obstacles:
        center = np.asarray(ob.center)
        d = np.linalg.norm(positions - center, axis=1)
        if (d < ob.radius).any():
            return True
    return False


def step(state: SwarmState, controls: np.ndarray, config: SwarmConfig) -> StepOutcome:
    """Advance one sample period under per-robot acceleration commands.

    Semi-implicit Euler: accelerations are clamped, then velocities updated and
    clamped, then positions updated with the post-clamp velocity. The episode
    fails when any pair gets closer than the safety distance or any robot
    penetrates an obstacle, and completes when episode_steps is reached.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.shape != state.positions.shape:
        raise ValueError(
            f"controls shape {controls.shape} != state shape {state.positions.shape}"
        )
    if not np.isfinite(controls).all():
        raise ValueError("controls must be finite")

    u = clamp_per_axis(controls, config.u_max)
    v_next = clamp_per_axis(
        state.velocities + u * config.sample_period, config.v_max
    )
    p_next = state.positions + v_next * config.sample_period
    t_next = state.time_step + 1
    next_state = make_state(t_next, p_next, v_next, config.comm_range)

    if min_pairwise_distance(p_next) < config.safety_dist:
        status = EpisodeStatus.FAILED_ROBOT_COLLISION
    elif _any_obstacle_penetration(p_next, config):
        status = EpisodeStatus.FAILED_OBSTACLE_COLLISION
    elif t_next == config.episode_steps:
        status = EpisodeStatus.COMPLETED
    else:
        status = EpisodeStatus.RUNNING
    return StepOutcome(next_state=next_state, status=status)
