"""Expert-labeled datasets: generation, binary file format, integrity checks.

An episode is stored as float32 arrays of robot states, observation features
and unclamped expert labels. States are quantized to float32 first and
features/labels recomputed from the quantized states, so everything in the
file is reproducible from the file itself. Failed expert episodes are
regenerated with a fresh attempt counter; their labels would not describe
completed flocking.

File layout: one JSON header line (versioned; config, expert weights, seeds,
split, payload hash) followed by the concatenated little-endian float32
blocks of every episode, in header order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig, config_hash
from .core import build_neighbor_graph, leader_at, make_state
from .dynamics import EpisodeStatus
from .expert import expert_control
from .observation import build_frame
from .rollout import run_episode

DATASET_FORMAT = "flockwork-dataset"
DATASET_VERSION = 1
MAX_ATTEMPTS_PER_EPISODE = 25


class DatasetError(RuntimeError):
    """Unreadable, corrupt, or ungeneratable dataset."""


@dataclass
class EpisodeData:
    """One completed episode, self-consistent at float32 precision."""

    seed_key: tuple
    positions: np.ndarray   # (T+1, N, D) float32
    velocities: np.ndarray  # (T+1, N, D) float32
    features: np.ndarray    # (T, N, 9D) float32
    labels: np.ndarray      # (T, N, D) float32, unclamped expert controls

    @property
    def n_steps(self) -> int:
        return self.features.shape[0]

    def edge_snapshots(self, comm_range: float) -> list:
        return [build_neighbor_graph(self.positions[t].astype(float), comm_range)
                for t in range(self.n_steps)]


@dataclass
class Dataset:
    config: SwarmConfig
    master_seed: int
    episodes: list[EpisodeData]
    train_idx: list[int]
    val_idx: list[int]

    @property
    def n_samples(self) -> int:
        return sum(ep.n_steps * ep.positions.shape[1] for ep in self.episodes)

    def split(self, which: str) -> list[EpisodeData]:
        idx = {"train": self.train_idx, "val": self.val_idx}[which]
        return [self.episodes[i] for i in idx]


def _episode_from_record(record, config: SwarmConfig, seed_key: tuple) -> EpisodeData:
    """Quantize a record to float32 and recompute features/labels from it."""
    t_steps = record.n_steps
    pos32 = np.asarray([s.positions for s in record.states], dtype=np.float32)
    vel32 = np.asarray([s.velocities for s in record.states], dtype=np.float32)
    features = np.empty((t_steps,) + record.frames[0].features.shape, dtype=np.float32)
    labels = np.empty((t_steps,) + record.applied.shape[1:], dtype=np.float32)
    for t in range(t_steps):
        state = make_state(t, pos32[t].astype(float), vel32[t].astype(float),
                           config.comm_range)
        leader = leader_at(t, config)
        features[t] = build_frame(state, leader, config).features
        labels[t] = expert_control(state, leader, config).u
    return EpisodeData(seed_key=seed_key, positions=pos32, velocities=vel32,
                       features=features, labels=labels)


def generate_dataset(
    config: SwarmConfig,
    n_train: int,
    n_val: int,
    seed: int,
) -> Dataset:
    """Roll the expert closed loop for every episode; retry failed ones."""
    episodes: list[EpisodeData] = []
    total = n_train + n_val
    for index in range(total):
        for attempt in range(MAX_ATTEMPTS_PER_EPISODE):
            seed_key = (int(seed), index, attempt)
            record = run_episode(config, seed_key, policy=None, horizon=0)
            if record.status is EpisodeStatus.COMPLETED:
                episodes.append(_episode_from_record(record, config, seed_key))
                break
        else:
            raise DatasetError(
                f"episode {index} failed {MAX_ATTEMPTS_PER_EPISODE} times; "
                "the expert cannot complete this configuration"
            )
    return Dataset(
        config=config,
        master_seed=int(seed),
        episodes=episodes,
        train_idx=list(range(n_train)),
        val_idx=list(range(n_train, total)),
    )


def _payload_arrays(ep: EpisodeData) -> list[np.ndarray]:
    return [ep.positions, ep.velocities, ep.features, ep.labels]


def save_dataset(dataset: Dataset, path: str) -> None:
    blobs = []
    episodes_meta = []
    for ep in dataset.episodes:
        arrays = _payload_arrays(ep)
        episodes_meta.append({
            "seed_key": list(ep.seed_key),
            "n_steps": ep.n_steps,
            "shapes": [list(a.shape) for a in arrays],
        })
        blobs.extend(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    payload = b"".join(blobs)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": dataset.config.to_dict(),
        "config_hash": config_hash(dataset.config),
        "expert_weights": {
            "c_alpha": dataset.config.c_alpha,
            "c_beta": dataset.config.c_beta,
            "c_gamma": dataset.config.c_gamma,
            "c1": dataset.config.c1,
        },
        "master_seed": dataset.master_seed,
        "train_idx": dataset.train_idx,
        "val_idx": dataset.val_idx,
        "episodes": episodes_meta,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"corrupt dataset header in {path}: {exc}")
    if header.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path} is not a dataset file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {header.get('version')}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise DatasetError(f"dataset payload corrupt or truncated: {path}")
    config = SwarmConfig.from_dict(header["config"])
    episodes = []
    offset = 0
    for meta in header["episodes"]:
        arrays = []
        for shape in meta["shapes"]:
            count = int(np.prod(shape))
            end = offset + count * 4
            if end > len(payload):
                raise DatasetError(f"dataset payload truncated in {path}")
            arrays.append(
                np.frombuffer(payload[offset:end], dtype="<f4")
                .reshape(shape).astype(np.float32)
            )
            offset = end
        episodes.append(EpisodeData(
            seed_key=tuple(meta["seed_key"]),
            positions=arrays[0], velocities=arrays[1],
            features=arrays[2], labels=arrays[3],
        ))
    if offset != len(payload):
        raise DatasetError(f"trailing bytes in dataset payload: {path}")
    return Dataset(
        config=config,
        master_seed=header["master_seed"],
        episodes=episodes,
        train_idx=list(header["train_idx"]),
        val_idx=list(header["val_idx"]),
    )


def verify_labels(dataset: Dataset, rel_tol: float = 1e-6) -> float:
    """Recompute expert controls from stored states; return the worst error.

    Error is measured relative to max(1, |label|) per component.
    """
    worst = 0.0
    config = dataset.config
    for ep in dataset.episodes:
        for t in range(ep.n_steps):
            state = make_state(t, ep.positions[t].astype(float),
                               ep.velocities[t].astype(float), config.comm_range)
            u = expert_control(state, leader_at(t, config), config).u
            err = np.abs(u - ep.labels[t]) / np.maximum(1.0, np.abs(u))
            worst = max(worst, float(err.max()))
    if worst > rel_tol:
        raise DatasetError(f"label integrity violated: relative error {worst:.3e}")
    return worst
