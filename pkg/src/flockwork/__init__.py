"""Multi-robot flocking workbench.

Centralized expert control (flocking, leader following, obstacle avoidance),
decentralized local observations with delayed-state message passing, and
imitation-trained spatiotemporal graph models, wired together by a CLI.
"""
from .config import ConfigError, Obstacle, SwarmConfig, load_config
from .core import LeaderState, SwarmState, build_neighbor_graph, leader_at
from .dynamics import EpisodeStatus, StepOutcome, clamp_per_axis, step
from .expert import BetaRobot, ExpertControl, expert_control
from .model import ModelSpec, build_params, load_checkpoint, predict, save_checkpoint
from .observation import History, ObservationFrame, build_frame, push_history
from .rollout import EpisodeRecord, run_episode

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Obstacle",
    "SwarmConfig",
    "load_config",
    "LeaderState",
    "SwarmState",
    "build_neighbor_graph",
    "leader_at",
    "EpisodeStatus",
    "StepOutcome",
    "clamp_per_axis",
    "step",
    "BetaRobot",
    "ExpertControl",
    "expert_control",
    "ModelSpec",
    "build_params",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "History",
    "ObservationFrame",
    "build_frame",
    "push_history",
    "EpisodeRecord",
    "run_episode",
]
