"""Closed-loop evaluation: trials, per-episode metrics, aggregation rules.

Failed episodes count against the completion rate but are excluded from the
MAE / velocity-variance / leader-distance aggregates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig
from .core import SwarmState, leader_at
from .dynamics import EpisodeStatus
from .rollout import EpisodeRecord, Policy, run_episode


def metric_velocity_variance(state: SwarmState) -> float:
    """Mean squared deviation of velocity vectors (scalar total variance)."""
    v = state.velocities
    centered = v - v.mean(axis=0)
    return float((centered * centered).sum(axis=1).mean())


def metric_tau(record: EpisodeRecord) -> float:
    """Mean distance to the leader over robots and steps t = 1..T."""
    config = record.config
    total, count = 0.0, 0
    for t in range(1, len(record.states)):
        leader = leader_at(t, config)
        d = np.linalg.norm(record.states[t].positions - leader.position, axis=1)
        total += float(d.sum())
        count += d.size
    return total / count


def episode_mae(record: EpisodeRecord) -> float:
    """Mean |expert - applied| over steps, robots and axes."""
    return float(np.abs(record.expert_u - record.applied).mean())


@dataclass(frozen=True)
class MetricsReport:
    n_trials: int
    n_completed: int
    completion_rate: float
    mae_mean: float | None
    mae_std: float | None
    vel_var_mean: float | None
    vel_var_std: float | None
    tau_mean: float | None
    tau_std: float | None

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_completed": self.n_completed,
            "completion_rate": self.completion_rate,
            "mae_mean": self.mae_mean, "mae_std": self.mae_std,
            "vel_var_mean": self.vel_var_mean, "vel_var_std": self.vel_var_std,
            "tau_mean": self.tau_mean, "tau_std": self.tau_std,
        }


def aggregate_metrics(records: list[EpisodeRecord]) -> MetricsReport:
    if not records:
        raise ValueError("aggregate_metrics needs at least one record")
    completed = [r for r in records if r.status is EpisodeStatus.COMPLETED]
    n, nc = len(records), len(completed)
    if nc == 0:
        return MetricsReport(n_trials=n, n_completed=0, completion_rate=0.0,
                             mae_mean=None, mae_std=None, vel_var_mean=None,
                             vel_var_std=None, tau_mean=None, tau_std=None)
    mae = np.array([episode_mae(r) for r in completed])
    vvar = np.array([metric_velocity_variance(r.states[-1]) for r in completed])
    tau = np.array([metric_tau(r) for r in completed])
    return MetricsReport(
        n_trials=n, n_completed=nc, completion_rate=nc / n,
        mae_mean=float(mae.mean()), mae_std=float(mae.std()),
        vel_var_mean=float(vvar.mean()), vel_var_std=float(vvar.std()),
        tau_mean=float(tau.mean()), tau_std=float(tau.std()),
    )


def run_trials(
    config: SwarmConfig,
    n_trials: int,
    seed: int,
    policy: Policy | None = None,
    horizon: int = 0,
) -> list[EpisodeRecord]:
    """Independent seeded episodes; trial i uses seed key (seed, i)."""
    return [
        run_episode(config, (int(seed), i), policy=policy, horizon=horizon)
        for i in range(n_trials)
    ]


def per_trial_rows(records: list[EpisodeRecord]) -> list[dict]:
    rows = []
    for i, r in enumerate(records):
        done = r.status is EpisodeStatus.COMPLETED
        rows.append({
            "trial": i,
            "seed_key": ":".join(str(s) for s in r.seed_key),
            "status": r.status.value,
            "steps": r.n_steps,
            "mae": episode_mae(r) if done else None,
            "vel_var": metric_velocity_variance(r.states[-1]) if done else None,
            "tau": metric_tau(r) if done else None,
        })
    return rows
