"""Training loop: squared-error regression onto expert labels with Adam,
exponential learning-rate decay, and early stopping on validation MAE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .model import ModelParams, ModelSpec, build_params, forward_batch
from .nn import autodiff as ad
from .nn.adam import Adam
from .nn.autodiff import Tensor
from .nn.layers import mean_agg_matrix


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    initial_lr: float = 1e-3
    decay: float = 0.98          # lr multiplier per epoch
    patience: int = 10           # epochs without val improvement before stopping
    batch_steps: int = 32        # timesteps per gradient update (all robots each)
    stride: int = 1              # keep every stride-th timestep as a sample
    seed: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1 or self.batch_steps < 1 or self.stride < 1:
            raise ValueError("epochs, batch_steps and stride must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during the given 1-based epoch."""
        return self.initial_lr * self.decay ** (epoch - 1)


@dataclass
class SampleArrays:
    """One split, stacked for vectorized history gathering."""

    feats: np.ndarray    # (E, T, N, F) float32
    aggs: np.ndarray     # (E, T, N, N) float32 neighbor-mean operators
    labels: np.ndarray   # (E, T, N, D) float32
    samples: np.ndarray  # (n, 2) [episode, step] pairs

    @property
    def n_samples(self) -> int:
        return len(self.samples)


def stack_split(dataset: Dataset, which: str, stride: int = 1) -> SampleArrays:
    episodes = dataset.split(which)
    if not episodes:
        raise ValueError(f"dataset has no {which} episodes")
    n = episodes[0].positions.shape[1]
    comm = dataset.config.comm_range
    feats = np.stack([ep.features for ep in episodes])
    labels = np.stack([ep.labels for ep in episodes])
    aggs = np.stack([
        np.stack([
            mean_agg_matrix(edges, n).astype(np.float32)
            for edges in ep.edge_snapshots(comm)
        ])
        for ep in episodes
    ])
    t_steps = feats.shape[1]
    samples = np.array(
        [(e, t) for e in range(len(episodes)) for t in range(0, t_steps, stride)],
        dtype=np.int64,
    )
    return SampleArrays(feats=feats, aggs=aggs, labels=labels, samples=samples)


def gather_batch(arrays: SampleArrays, horizon: int, idx: np.ndarray):
    """History windows for the chosen samples, cold-start padded at t < L."""
    e = arrays.samples[idx, 0]
    t = arrays.samples[idx, 1]
    offsets = np.arange(-horizon, 1)
    steps = np.maximum(t[:, None] + offsets[None, :], 0)   # (B, L+1)
    feats = arrays.feats[e[:, None], steps]
    aggs = arrays.aggs[e[:, None], steps]
    labels = arrays.labels[e, t]
    return feats, aggs, labels


def batch_loss(params: ModelParams, feats, aggs, labels) -> Tensor:
    pred = forward_batch(params, feats, aggs)
    diff = ad.sub(pred, Tensor(labels))
    return ad.mean(ad.mul(diff, diff))


def train_epoch(
    params: ModelParams,
    arrays: SampleArrays,
    adam: Adam,
    lr: float,
    batch_steps: int,
    rng: np.random.Generator,
) -> float:
    """One pass over the split in shuffled batches; returns the mean loss."""
    order = rng.permutation(arrays.n_samples)
    total_loss = 0.0
    for start in range(0, len(order), batch_steps):
        idx = order[start:start + batch_steps]
        feats, aggs, labels = gather_batch(arrays, params.spec.horizon, idx)
        loss = batch_loss(params, feats, aggs, labels)
        adam.zero_grad()
        loss.backward()
        adam.step(lr)
        total_loss += float(loss.data) * len(idx)
    return total_loss / arrays.n_samples


def validate(params: ModelParams, arrays: SampleArrays, batch_steps: int = 256) -> float:
    """Mean absolute error between labels and predictions over a split."""
    total, count = 0.0, 0
    with ad.no_grad():
        for start in range(0, arrays.n_samples, batch_steps):
            idx = np.arange(start, min(start + batch_steps, arrays.n_samples))
            feats, aggs, labels = gather_batch(arrays, params.spec.horizon, idx)
            pred = forward_batch(params, feats, aggs)
            total += float(np.abs(pred.data - labels).sum(dtype=np.float64))
            count += labels.size
    return total / count


@dataclass
class FitResult:
    params: ModelParams
    spec: ModelSpec
    best_epoch: int
    best_val_mae: float
    epochs_run: int
    log: list[dict] = field(default_factory=list)


def fit(spec: ModelSpec, dataset: Dataset, schedule: TrainSchedule) -> FitResult:
    """Train with per-epoch lr decay; keep the best-validation parameters."""
    train_arrays = stack_split(dataset, "train", stride=schedule.stride)
    val_arrays = stack_split(dataset, "val", stride=schedule.stride)
    params = build_params(spec, seed=schedule.seed)
    adam = Adam(params.tensors(), lr=schedule.initial_lr)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((schedule.seed, 0x5C0F))
    )
    best_val = np.inf
    best_epoch = 0
    best_data: list[np.ndarray] | None = None
    log: list[dict] = []
    since_best = 0
    epochs_run = 0
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.lr_at(epoch)
        train_loss = train_epoch(params, train_arrays, adam, lr,
                                 schedule.batch_steps, shuffle_rng)
        val_mae = validate(params, val_arrays)
        epochs_run = epoch
        improved = val_mae < best_val
        if improved:
            best_val = val_mae
            best_epoch = epoch
            best_data = [t.data.copy() for t in params.tensors()]
            since_best = 0
        else:
            since_best += 1
        log.append({"epoch": epoch, "lr": lr, "train_loss": train_loss,
                    "val_mae": val_mae, "best": improved})
        if since_best >= schedule.patience:
            break
    if best_data is not None:
        for tensor, data in zip(params.tensors(), best_data):
            tensor.data = data
    return FitResult(params=params, spec=spec, best_epoch=best_epoch,
                     best_val_mae=float(best_val), epochs_run=epochs_run, log=log)
