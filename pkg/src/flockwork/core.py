"""World state: robot positions/velocities, the virtual leader, the comm graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Obstacle, SwarmConfig

MAX_INIT_ATTEMPTS = 10_000


class InfeasibleInitError(RuntimeError):
    """Could not place robots with the required minimum separation."""


@dataclass(frozen=True)
class LeaderState:
    """Virtual leader: a reference trajectory, not a physical robot."""

    position: np.ndarray  # (D,)
    velocity: np.ndarray  # (D,), constant within an episode


@dataclass(frozen=True)
class SwarmState:
    """Snapshot of the swarm at one timestep, including the comm graph."""

    time_step: int
    positions: np.ndarray        # (N, D) m
    velocities: np.ndarray       # (N, D) m/s
    edges: tuple[tuple[int, int], ...]  # undirected, i < j

    @property
    def n_robots(self) -> int:
        return self.positions.shape[0]

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_robots)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def min_pairwise_distance(positions: np.ndarray) -> float:
    n = positions.shape[0]
    if n < 2:
        return np.inf
    dist = pairwise_distances(positions)
    iu = np.triu_indices(n, k=1)
    return float(dist[iu].min())


def build_neighbor_graph(
    positions: np.ndarray, comm_range: float
) -> tuple[tuple[int, int], ...]:
    """Edges (i, j), i < j, for pairs strictly closer than the comm range.

    Robots at exactly the comm range are not neighbors.
    """
    if not np.isfinite(positions).all():
        raise ValueError("positions must be finite")
    n = positions.shape[0]
    if n < 2:
        return ()
    dist = pairwise_distances(positions)
    iu, ju = np.triu_indices(n, k=1)
    mask = dist[iu, ju] < comm_range
    return tuple(zip(iu[mask].tolist(), ju[mask].tolist()))


def make_state(time_step: int, positions: np.ndarray, velocities: np.ndarray,
               comm_range: float) -> SwarmState:
    return SwarmState(
        time_step=time_step,
        positions=positions,
        velocities=velocities,
        edges=build_neighbor_graph(positions, comm_range),
    )


def init_positions(config: SwarmConfig, rng: np.random.Generator) -> np.ndarray:
    """Sample initial positions uniformly in the init box.

    Whole configurations are redrawn until every pairwise distance exceeds
    the safety distance and every robot clears every obstacle surface by the
    same margin (the controller diverges for vanishing standoff, and states
    inside an obstacle are undefined); gives up after MAX_INIT_ATTEMPTS draws.
    """
    hi = config.init_box_high
    sep = config.min_init_separation
    centers = [np.asarray(ob.center) for ob in config.obstacles]
    radii = [ob.radius for ob in config.obstacles]
    for _ in range(MAX_INIT_ATTEMPTS):
        pts = rng.uniform(0.0, hi, size=(config.n_robots, config.dim))
        if min_pairwise_distance(pts) <= sep:
            continue
        if any((np.linalg.norm(pts - c, axis=1) <= r + sep).any()
               for c, r in zip(centers, radii)):
            continue
        return pts
    raise InfeasibleInitError(
        f"no valid initialization for N={config.n_robots} in a box of "
        f"{hi:.3f} m after {MAX_INIT_ATTEMPTS} attempts"
    )


def leader_at(t: int, config: SwarmConfig) -> LeaderState:
    """Leader state at step t: straight line at constant speed along +x."""
    if t < 0:
        raise ValueError("t must be >= 0")
    velocity = np.zeros(config.dim)
    velocity[0] = config.leader_speed
    start = np.asarray(config.leader_start_position(), dtype=float)
    return LeaderState(
        position=start + velocity * (t * config.sample_period),
        velocity=velocity,
    )


def surface_distance(p: np.ndarray, obstacle: Obstacle) -> float:
    """Signed distance from a point to the obstacle surface (negative inside)."""
    center = np.asarray(obstacle.center, dtype=float)
    return float(np.linalg.norm(np.asarray(p, dtype=float) - center) - obstacle.radius)
