"""Closed-loop episode engine, shared by dataset generation and evaluation.

Every step records the visited state, the observation frame, the expert's
(unclamped) control at that state with its component terms, and the control
actually applied. With no policy the expert drives the swarm; with a policy
the expert is still evaluated at each visited state as the reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import SwarmConfig
from .core import LeaderState, SwarmState, init_positions, leader_at, make_state
from .dynamics import EpisodeStatus, step
from .expert import expert_control
from .observation import History, ObservationFrame, build_frame, push_history

# policy(history, state, leader) -> (N, D) accelerations
Policy = Callable[[History, SwarmState, LeaderState], np.ndarray]


@dataclass
class EpisodeRecord:
    """Full trace of one episode."""

    config: SwarmConfig
    seed_key: tuple
    status: EpisodeStatus
    states: list[SwarmState]            # length steps+1, includes initial state
    frames: list[ObservationFrame]      # one per executed step
    applied: np.ndarray                 # (steps, N, D)
    expert_u: np.ndarray                # (steps, N, D), unclamped
    expert_alpha: np.ndarray            # (steps, N, D)
    expert_beta: np.ndarray
    expert_gamma: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.frames)

    def leader_states(self) -> list[LeaderState]:
        """Leader at t = 0 .. steps (it is a pure function of time)."""
        return [leader_at(t, self.config) for t in range(len(self.states))]


def run_episode(
    config: SwarmConfig,
    seed_key: tuple | int,
    policy: Policy | None = None,
    horizon: int = 0,
) -> EpisodeRecord:
    """Roll one episode; expert-driven when ``policy`` is None.

    ``seed_key`` feeds a SeedSequence, so any int or tuple of ints is a
    reproducible identity for the episode.
    """
    if isinstance(seed_key, int):
        seed_key = (seed_key,)
    rng = np.random.default_rng(np.random.SeedSequence(tuple(seed_key)))
    positions = init_positions(config, rng)
    velocities = np.zeros_like(positions)
    state = make_state(0, positions, velocities, config.comm_range)

    states = [state]
    frames: list[ObservationFrame] = []
    applied, labels = [], []
    terms_a, terms_b, terms_g = [], [], []
    history: History | None = None
    status = EpisodeStatus.RUNNING

    for t in range(config.episode_steps):
        leader = leader_at(t, config)
        frame = build_frame(state, leader, config)
        history = History.seed(frame, horizon) if history is None \
            else push_history(history, frame)
        expert = expert_control(state, leader, config)
        u = expert.u if policy is None else np.asarray(
            policy(history, state, leader), dtype=float
        )

        frames.append(frame)
        applied.append(u)
        labels.append(expert.u)
        terms_a.append(expert.alpha_term)
        terms_b.append(expert.beta_term)
        terms_g.append(expert.gamma_term)

        outcome = step(state, u, config)
        state = outcome.next_state
        states.append(state)
        status = outcome.status
        if status is not EpisodeStatus.RUNNING:
            break

    return EpisodeRecord(
        config=config,
        seed_key=tuple(seed_key),
        status=status,
        states=states,
        frames=frames,
        applied=np.asarray(applied),
        expert_u=np.asarray(labels),
        expert_alpha=np.asarray(terms_a),
        expert_beta=np.asarray(terms_b),
        expert_gamma=np.asarray(terms_g),
    )


def model_policy(params, spec) -> Policy:
    """Wrap trained model parameters as a rollout policy."""
    from .model import predict

    def _policy(history: History, state: SwarmState, leader: LeaderState):
        return predict(history, params, spec).astype(float)

    return _policy
