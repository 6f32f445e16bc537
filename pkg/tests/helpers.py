"""Shared test utilities: independent oracles and random instance builders.

Oracles here re-derive expected values by brute force (walk enumeration,
finite differences, reachability) and never call the code paths they check.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from flockwork.config import SwarmConfig
from flockwork.core import make_state


def random_snapshot(rng: np.random.Generator, n: int) -> tuple:
    """A random undirected edge set over n nodes."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(0, len(pairs) + 1))
    sel = rng.permutation(len(pairs))[:k]
    return tuple(pairs[m] for m in sel)


def neighbor_lists(edges, n: int) -> list[list[int]]:
    nb: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nb[i].append(j)
        nb[j].append(i)
    return nb


def fraction_frames(rng: np.random.Generator, n: int, horizon: int,
                    width: int = 2) -> list[np.ndarray]:
    """Integer-valued object arrays so aggregation stays in exact rationals."""
    frames = []
    for _ in range(horizon + 1):
        ints = rng.integers(-5, 6, (n, width))
        frames.append(np.array(
            [[Fraction(int(x)) for x in row] for row in ints], dtype=object
        ))
    return frames


def delayed_walk_token(i: int, hop: int, frames: list[np.ndarray],
                       snapshots: list) -> np.ndarray:
    """Brute-force delayed-walk enumeration oracle for one spatial token.

    Walks start at node i; step m (counted from i) traverses an edge of the
    snapshot at frame index L-m+1 and multiplies in 1/degree of the node the
    step leaves from. The walk's end node is read from frame L-hop+1. Token 0
    is the raw current embedding.
    """
    L = len(frames) - 1
    n = frames[0].shape[0]
    if hop == 0:
        return frames[L][i].copy()
    width = frames[0].shape[1]
    total = np.array([Fraction(0)] * width, dtype=object)
    nbrs = [neighbor_lists(s, n) for s in snapshots]

    def recurse(node: int, m: int, weight: Fraction) -> None:
        nonlocal total
        if m > hop:
            total = total + weight * frames[L - hop + 1][node]
            return
        nb = nbrs[L - m + 1][node]
        if not nb:
            return
        w = weight * Fraction(1, len(nb))
        for nxt in nb:
            recurse(nxt, m + 1, w)

    recurse(i, 1, Fraction(1))
    return total


def causal_cone(i: int, horizon: int, snapshots: list, n: int) -> set:
    """(node, frame) pairs allowed to influence node i's prediction.

    Temporal branch: i and its 1-hop neighbors at each timestamp. Spatial
    branch: level sets grown one snapshot at a time, newest snapshot first;
    hop-l tokens read frame L-l+1 at the level-l set.
    """
    nbrs = [neighbor_lists(s, n) for s in snapshots]
    cone = {(i, horizon)}
    for s in range(horizon + 1):
        cone.add((i, s))
        for j in nbrs[s][i]:
            cone.add((j, s))
    for l in range(1, horizon + 1):
        level = {i}
        for m in range(1, l + 1):
            level = level | {j for node in level for j in nbrs[horizon - m + 1][node]}
        for j in level:
            cone.add((j, horizon - l + 1))
    return cone


def grid_positions(n: int, spacing: float, dim: int = 2) -> np.ndarray:
    """Collision-free deterministic layout for hand-built states."""
    side = int(np.ceil(np.sqrt(n)))
    pts = [(spacing * (k % side), spacing * (k // side)) + (0.0,) * (dim - 2)
           for k in range(n)]
    return np.array(pts[:n], dtype=float)


def random_state(rng: np.random.Generator, config: SwarmConfig, spread: float = 2.0):
    """A valid random swarm state (outside obstacles, no coincidences)."""
    while True:
        pos = rng.uniform(0, spread * np.sqrt(config.n_robots),
                          size=(config.n_robots, config.dim))
        ok = True
        for ob in config.obstacles:
            if (np.linalg.norm(pos - np.asarray(ob.center), axis=1)
                    <= ob.radius + 0.05).any():
                ok = False
                break
        if not ok:
            continue
        diff = pos[:, None] - pos[None, :]
        d = np.sqrt((diff * diff).sum(-1))
        if config.n_robots > 1:
            iu = np.triu_indices(config.n_robots, 1)
            if d[iu].min() <= 0.05:
                continue
        vel = rng.standard_normal((config.n_robots, config.dim))
        return make_state(0, pos, vel, config.comm_range)
