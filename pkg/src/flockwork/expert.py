"""Centralized expert controller: flocking + obstacle avoidance + leader tracking.

The applied acceleration for robot i is the weighted sum

    u_i = c_alpha * u_i^alpha + c_beta * u_i^beta + c_gamma * u_i^gamma

where the alpha term aligns velocities against every other robot and repels
via an inter-robot potential, the beta term does the same against each
robot's projection onto nearby obstacle surfaces, and the gamma term is
linear position/velocity feedback toward the virtual leader.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Obstacle, SwarmConfig
from .core import LeaderState, SwarmState


class CoincidentRobotsError(ValueError):
    """Two interacting agents share one position; the potential is undefined."""


class ObstacleProjectionError(ValueError):
    """A robot sits inside (or at the center of) an obstacle."""


@dataclass(frozen=True)
class ExpertControl:
    """Weighted control plus the three unweighted component terms."""

    u: np.ndarray           # (N, D)
    alpha_term: np.ndarray  # (N, D)
    beta_term: np.ndarray   # (N, D)
    gamma_term: np.ndarray  # (N, D)


@dataclass(frozen=True)
class BetaRobot:
    """Imaginary agent at a robot's projection onto an obstacle surface."""

    position: np.ndarray   # (D,), on the surface
    velocity: np.ndarray   # (D,)
    mu: float
    a_k: np.ndarray        # (D,), unit vector from obstacle center to robot
    P: np.ndarray          # (D, D), projector onto the tangent plane


def _radial_coef(r: np.ndarray) -> np.ndarray:
    """dU/dr / r for the pair potential U(r) = 1/r^2 + log(r^2).

    dU/dr = -2/r^3 + 2/r: repulsive below r=1, attractive above, zero at r=1.
    """
    return (-2.0 / r**3 + 2.0 / r) / r


def potential_gradient(p_i: np.ndarray, p_j: np.ndarray) -> np.ndarray:
    """Gradient of the pair potential with respect to p_i."""
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    diff = p_i - p_j
    r = np.linalg.norm(diff)
    if r == 0.0:
        raise CoincidentRobotsError("coincident robots: pair potential undefined")
    return _radial_coef(np.array(r)) * diff


def alpha_control(state: SwarmState, config: SwarmConfig) -> np.ndarray:
    """Velocity consensus over all robots plus range-limited pair repulsion.

    The velocity-mismatch sum is global (this is the centralized expert); the
    potential-gradient sum only covers pairs inside the comm range.
    """
    p, v = state.positions, state.velocities
    n = p.shape[0]
    vel_term = -(n * v - v.sum(axis=0))

    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    off_diag = ~np.eye(n, dtype=bool)
    if (dist[off_diag] == 0.0).any():
        raise CoincidentRobotsError("coincident robots in swarm state")
    in_range = off_diag & (dist < config.comm_range)
    coef = np.zeros((n, n))
    coef[in_range] = _radial_coef(dist[in_range])
    grad_term = (coef[:, :, None] * diff).sum(axis=1)
    return vel_term - grad_term


def project_onto_obstacle(
    p_i: np.ndarray, v_i: np.ndarray, obstacle: Obstacle
) -> BetaRobot:
    """Project a robot onto an obstacle surface and build its beta-robot."""
    p_i = np.asarray(p_i, dtype=float)
    v_i = np.asarray(v_i, dtype=float)
    center = np.asarray(obstacle.center, dtype=float)
    rel = p_i - center
    d = np.linalg.norm(rel)
    if d <= obstacle.radius:
        raise ObstacleProjectionError(
            f"robot at distance {d:.6f} from obstacle center is not strictly "
            f"outside radius {obstacle.radius}"
        )
    mu = obstacle.radius / d
    a_k = rel / d
    proj = np.eye(len(p_i)) - np.outer(a_k, a_k)
    return BetaRobot(
        position=mu * p_i + (1.0 - mu) * center,
        velocity=mu * (proj @ v_i),
        mu=float(mu),
        a_k=a_k,
        P=proj,
    )


def beta_control(state: SwarmState, config: SwarmConfig) -> np.ndarray:
    """Consensus + repulsion against each robot's in-range beta-robots.

    An obstacle contributes for robot i only when the robot-to-projection
    distance is strictly inside the comm range.
    """
    p, v = state.positions, state.velocities
    n, dim = p.shape
    out = np.zeros((n, dim))
    for ob in config.obstacles:
        center = np.asarray(ob.center, dtype=float)
        rel = p - center
        d = np.linalg.norm(rel, axis=1)
        if (d <= ob.radius).any():
            raise ObstacleProjectionError("robot inside obstacle in beta_control")
        r_surf = d - ob.radius  # distance to the projection point
        active = r_surf < config.comm_range
        if not active.any():
            continue
        if (r_surf[active] == 0.0).any():
            raise CoincidentRobotsError("robot exactly on obstacle surface")
        idx = np.where(active)[0]
        a = rel[idx] / d[idx, None]
        mu = ob.radius / d[idx]
        # P v = v - a (a . v) applied row-wise
        v_beta = mu[:, None] * (v[idx] - a * (a * v[idx]).sum(axis=1, keepdims=True))
        diff = a * r_surf[idx, None]  # p_i - p_{i,k}
        coef = _radial_coef(r_surf[idx])
        out[idx] += -(v[idx] - v_beta) - coef[:, None] * diff
    return out


def gamma_control(
    state: SwarmState, leader: LeaderState, config: SwarmConfig
) -> np.ndarray:
    """Linear feedback toward the virtual leader with gains c1 and sqrt(c1)."""
    return -config.c1 * (state.positions - leader.position) - config.c2 * (
        state.velocities - leader.velocity
    )


def expert_control(
    state: SwarmState, leader: LeaderState, config: SwarmConfig
) -> ExpertControl:
    alpha = alpha_control(state, config)
    beta = beta_control(state, config)
    gamma = gamma_control(state, leader, config)
    u = config.c_alpha * alpha + config.c_beta * beta + config.c_gamma * gamma
    return ExpertControl(u=u, alpha_term=alpha, beta_term=beta, gamma_term=gamma)
