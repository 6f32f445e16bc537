import hashlib

import numpy as np
import pytest

from flockwork.config import Obstacle, SwarmConfig
from flockwork.core import leader_at, make_state
from flockwork.dataset import (
    DatasetError,
    generate_dataset,
    load_dataset,
    save_dataset,
    verify_labels,
)
from flockwork.expert import gamma_control
from flockwork.model import ModelSpec, build_params, forward_batch, predict
from flockwork.nn import autodiff as ad
from flockwork.nn.adam import Adam
from flockwork.observation import History, ObservationFrame
from flockwork.training import (
    SampleArrays,
    TrainSchedule,
    batch_loss,
    fit,
    gather_batch,
    stack_split,
    train_epoch,
    validate,
)

TINY = SwarmConfig(n_robots=4, episode_steps=30, obstacles=(), leader_speed=0.5)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset(TINY, n_train=2, n_val=1, seed=3)


class TestGeneration:
    def test_sample_count(self, tiny_dataset):
        assert tiny_dataset.n_samples == 3 * 30 * 4

    def test_split_indices(self, tiny_dataset):
        assert tiny_dataset.train_idx == [0, 1]
        assert tiny_dataset.val_idx == [2]
        assert len(tiny_dataset.split("train")) == 2
        assert len(tiny_dataset.split("val")) == 1

    def test_single_robot_labels_are_pure_leader_term(self):
        cfg = SwarmConfig(n_robots=1, episode_steps=20, obstacles=())
        ds = generate_dataset(cfg, n_train=1, n_val=0, seed=1)
        ep = ds.episodes[0]
        for t in range(ep.n_steps):
            state = make_state(t, ep.positions[t].astype(float),
                               ep.velocities[t].astype(float), cfg.comm_range)
            expected = cfg.c_gamma * gamma_control(state, leader_at(t, cfg), cfg)
            assert (ep.labels[t] == expected.astype(np.float32)).all()

    def test_same_seed_byte_identical_files(self, tmp_path, tiny_dataset):
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_dataset(tiny_dataset, p1)
        save_dataset(generate_dataset(TINY, n_train=2, n_val=1, seed=3), p2)
        h1 = hashlib.sha256(open(p1, "rb").read()).hexdigest()
        h2 = hashlib.sha256(open(p2, "rb").read()).hexdigest()
        assert h1 == h2

    def test_label_integrity(self, tiny_dataset):
        assert verify_labels(tiny_dataset) <= 1e-6

    def test_file_round_trip(self, tmp_path, tiny_dataset):
        path = str(tmp_path / "d.bin")
        save_dataset(tiny_dataset, path)
        again = load_dataset(path)
        assert again.config == tiny_dataset.config
        assert again.master_seed == tiny_dataset.master_seed
        for a, b in zip(tiny_dataset.episodes, again.episodes):
            assert (a.positions == b.positions).all()
            assert (a.features == b.features).all()
            assert (a.labels == b.labels).all()

    def test_corrupt_payload_rejected(self, tmp_path, tiny_dataset):
        path = str(tmp_path / "d.bin")
        save_dataset(tiny_dataset, path)
        blob = bytearray(open(path, "rb").read())
        blob[-8] ^= 0x5A
        open(path, "wb").write(bytes(blob))
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_not_a_dataset_rejected(self, tmp_path):
        path = str(tmp_path / "d.bin")
        open(path, "wb").write(b'{"format": "other"}\npayload')
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_impossible_config_exhausts_retries(self):
        # leader gains high enough to compress the swarm below the safety
        # distance: every attempt ends in a robot collision
        cfg = SwarmConfig(
            n_robots=6, episode_steps=600, obstacles=(), init_box_scale=1.2,
            safety_dist=0.5, c_gamma=8.0, c1=16.0,
        )
        with pytest.raises(DatasetError):
            generate_dataset(cfg, n_train=1, n_val=0, seed=0)


class TestBatching:
    def test_cold_start_padding(self, tiny_dataset):
        arrays = stack_split(tiny_dataset, "train")
        horizon = 2
        idx = np.array([0])  # episode 0, step 0
        feats, aggs, labels = gather_batch(arrays, horizon, idx)
        assert feats.shape == (1, 3, 4, 18)
        assert (feats[0, 0] == feats[0, 1]).all()
        assert (feats[0, 1] == feats[0, 2]).all()

    def test_window_indices(self, tiny_dataset):
        arrays = stack_split(tiny_dataset, "train")
        idx = np.array([5])  # episode 0, step 5
        feats, _, _ = gather_batch(arrays, 2, idx)
        assert (feats[0, 0] == arrays.feats[0, 3]).all()
        assert (feats[0, 2] == arrays.feats[0, 5]).all()

    def test_stride_subsampling(self, tiny_dataset):
        full = stack_split(tiny_dataset, "train", stride=1)
        sub = stack_split(tiny_dataset, "train", stride=5)
        assert sub.n_samples == full.n_samples // 5

    def test_gather_matches_history_predict(self, tiny_dataset):
        # training-path forward equals the rollout-path predict on the same
        # stored frames
        arrays = stack_split(tiny_dataset, "train")
        spec = ModelSpec("stgnn", 2, 18, 2)
        params = build_params(spec, seed=0)
        ep = tiny_dataset.episodes[0]
        snapshots = ep.edge_snapshots(tiny_dataset.config.comm_range)
        t = 7
        frames = tuple(
            ObservationFrame(time_step=s, features=ep.features[s].astype(float),
                             edges=snapshots[s])
            for s in range(t - 2, t + 1)
        )
        via_history = predict(History(frames=frames), params)
        feats, aggs, _ = gather_batch(arrays, 2, np.array([t]))
        with ad.no_grad():
            via_batch = forward_batch(params, feats, aggs).data[0]
        assert (via_history == via_batch).all()


class TestTraining:
    def test_perfect_labels_zero_loss_zero_grads(self, tiny_dataset):
        spec = ModelSpec("stgnn", 1, 18, 2)
        params = build_params(spec, seed=4)
        arrays = stack_split(tiny_dataset, "train")
        idx = np.arange(16)
        feats, aggs, _ = gather_batch(arrays, 1, idx)
        with ad.no_grad():
            targets = forward_batch(params, feats, aggs).data
        loss = batch_loss(params, feats, aggs, targets)
        assert float(loss.data) == 0.0
        loss.backward()
        for t in params.tensors():
            assert (t.grad == 0.0).all()

    def test_one_epoch_improves_loss(self, tiny_dataset):
        spec = ModelSpec("stgnn", 1, 18, 2)
        params = build_params(spec, seed=5)
        arrays = stack_split(tiny_dataset, "train")
        adam = Adam(params.tensors())
        rng = np.random.default_rng(0)
        feats, aggs, labels = gather_batch(arrays, 1, np.arange(arrays.n_samples))
        with ad.no_grad():
            before = float(batch_loss(params, feats, aggs, labels).data)
        train_epoch(params, arrays, adam, 1e-3, 16, rng)
        with ad.no_grad():
            after = float(batch_loss(params, feats, aggs, labels).data)
        assert after < before

    def test_overfit_small_sample(self, tiny_dataset):
        # 100-sample memorization: loss below 1% of start within 500 updates
        spec = ModelSpec("stgnn", 1, 18, 2)
        params = build_params(spec, seed=6)
        arrays = stack_split(tiny_dataset, "train")
        sub = SampleArrays(feats=arrays.feats, aggs=arrays.aggs,
                           labels=arrays.labels, samples=arrays.samples[:50])
        feats, aggs, labels = gather_batch(sub, 1, np.arange(sub.n_samples))
        adam = Adam(params.tensors())
        initial = None
        for step in range(500):
            loss = batch_loss(params, feats, aggs, labels)
            if initial is None:
                initial = float(loss.data)
            if float(loss.data) < 0.01 * initial:
                break
            adam.zero_grad()
            loss.backward()
            adam.step(3e-3)
        assert float(loss.data) < 0.01 * initial

    def test_validate_zero_for_perfect_model(self, tiny_dataset):
        spec = ModelSpec("tgnn", 1, 18, 2)
        params = build_params(spec, seed=7)
        arrays = stack_split(tiny_dataset, "val")
        feats, aggs, _ = gather_batch(arrays, 1, np.arange(arrays.n_samples))
        with ad.no_grad():
            targets = forward_batch(params, feats, aggs).data
        perfect = SampleArrays(feats=arrays.feats, aggs=arrays.aggs,
                               labels=arrays.labels.copy(),
                               samples=arrays.samples)
        e, t = arrays.samples[:, 0], arrays.samples[:, 1]
        perfect.labels[e, t] = targets
        assert validate(params, perfect) == 0.0

    def test_validate_constant_offset_is_one(self, tiny_dataset):
        spec = ModelSpec("tgnn", 1, 18, 2)
        params = build_params(spec, seed=8)
        arrays = stack_split(tiny_dataset, "val")
        feats, aggs, _ = gather_batch(arrays, 1, np.arange(arrays.n_samples))
        with ad.no_grad():
            targets = forward_batch(params, feats, aggs).data
        shifted = SampleArrays(feats=arrays.feats, aggs=arrays.aggs,
                               labels=arrays.labels.copy(),
                               samples=arrays.samples)
        e, t = arrays.samples[:, 0], arrays.samples[:, 1]
        shifted.labels[e, t] = targets + 1.0
        assert validate(params, shifted) == pytest.approx(1.0, abs=1e-6)

    def test_validate_order_invariant(self, tiny_dataset):
        spec = ModelSpec("tgnn", 1, 18, 2)
        params = build_params(spec, seed=9)
        arrays = stack_split(tiny_dataset, "val")
        perm = np.random.default_rng(0).permutation(arrays.n_samples)
        shuffled = SampleArrays(feats=arrays.feats, aggs=arrays.aggs,
                                labels=arrays.labels,
                                samples=arrays.samples[perm])
        assert validate(params, arrays) == pytest.approx(
            validate(params, shuffled), rel=1e-9
        )


class TestSchedule:
    def test_lr_closed_form(self):
        sched = TrainSchedule(initial_lr=1e-3, decay=0.98)
        assert sched.lr_at(1) == 1e-3
        assert sched.lr_at(11) == pytest.approx(1e-3 * 0.98**10)

    @pytest.mark.parametrize("kwargs", [
        {"initial_lr": 0.0},
        {"patience": 0},
        {"epochs": 0},
        {"batch_steps": 0},
        {"stride": 0},
        {"decay": 0.0},
        {"decay": 1.5},
    ])
    def test_invalid_schedules(self, kwargs):
        with pytest.raises(ValueError):
            TrainSchedule(**kwargs)

    def test_patience_one_stops_after_two_epochs(self, tiny_dataset):
        # a vanishing learning rate never improves validation, so the second
        # epoch triggers the stop
        spec = ModelSpec("tgnn", 1, 18, 2)
        sched = TrainSchedule(epochs=10, initial_lr=1e-30, patience=1, seed=0)
        result = fit(spec, tiny_dataset, sched)
        assert result.epochs_run == 2
        assert result.best_epoch == 1

    def test_best_checkpoint_not_worse_than_final(self, tiny_dataset):
        spec = ModelSpec("tgnn", 1, 18, 2)
        sched = TrainSchedule(epochs=4, stride=2, seed=1)
        result = fit(spec, tiny_dataset, sched)
        assert result.best_val_mae <= result.log[-1]["val_mae"]
        assert result.log[result.best_epoch - 1]["val_mae"] == result.best_val_mae

    def test_fit_deterministic(self, tiny_dataset):
        spec = ModelSpec("dgnn", 1, 18, 2)
        sched = TrainSchedule(epochs=2, stride=3, seed=11)
        r1 = fit(spec, tiny_dataset, sched)
        r2 = fit(spec, tiny_dataset, sched)
        assert r1.best_val_mae == r2.best_val_mae
        for a, b in zip(r1.params.tensors(), r2.params.tensors()):
            assert (a.data == b.data).all()
