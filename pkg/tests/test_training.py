import asyncio
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import ArtifactCorrupted, ConfigError, DimensionMismatch, EmptySplit, NonFiniteLoss, SamplerExhausted
from feasibility.check import is_feasible
from policy.networks import MlpPolicy, RnnPolicy
from policy.normalized import NeuralPolicy, Normalizer
from training.dataset import INPUTS_FILE, Dataset, load_dataset, save_dataset, split
from training.generate import generate_dataset
from training.optim import Adam, EarlyStopping, cosine_lr
from training.samplers import BoxSampler, make_sampler
from training.trainer import StopReason, TrainConfig, init_policy, train
from utils.artifacts import write_matrix

FAST_DATASET = {"chunk": 2, "probe": 50, "min_acceptance": 0.01}


def linear_dataset(rng, M=50, n_x=2, N=2, n_u=1, G=None):
    X = rng.normal(size=(M, n_x))
    G = rng.normal(size=(N * n_u, n_x)) if G is None else G
    return Dataset(X, X @ G.T, N, n_u), G


def linear_policy(rng, n_x=2, N=2, n_u=1):
    net = MlpPolicy.initialize(n_x, [], n_u, N, rng, activation="identity")
    return NeuralPolicy(net, Normalizer.identity(n_x, n_u))


class TestDataset:
    def test_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            Dataset(np.zeros((4, 2)), np.zeros((4, 5)), N=2, n_u=2)

    def test_split_two_way(self, rng):
        ds = Dataset(np.arange(10.0).reshape(10, 1), np.zeros((10, 2)), N=2, n_u=1)
        train, val = split(ds, 0.5, seed=3)
        assert len(train) == 5 and len(val) == 5
        rows = np.sort(np.concatenate([train.inputs[:, 0], val.inputs[:, 0]]))
        assert_allclose(rows, np.arange(10.0))
        # внутри части сохраняется исходный порядок
        assert np.all(np.diff(train.inputs[:, 0]) > 0)
        again, _ = split(ds, 0.5, seed=3)
        assert np.array_equal(again.inputs, train.inputs)

    def test_split_three_way(self):
        ds = Dataset(np.arange(20.0).reshape(20, 1), np.zeros((20, 1)), N=1, n_u=1)
        train, val, test = split(ds, 0.1, seed=0, test_fraction=0.1)
        assert (len(train), len(val), len(test)) == (16, 2, 2)
        assert not set(test.inputs[:, 0]) & set(val.inputs[:, 0])

    def test_empty_split(self):
        ds = Dataset(np.zeros((3, 1)), np.zeros((3, 1)), N=1, n_u=1)
        with pytest.raises(EmptySplit):
            split(ds, 0.1, seed=0)

    def test_bad_fraction(self):
        ds = Dataset(np.zeros((3, 1)), np.zeros((3, 1)), N=1, n_u=1)
        with pytest.raises(ConfigError):
            split(ds, 1.5, seed=0)

    def test_save_load(self, rng, tmp_path):
        ds = Dataset(rng.normal(size=(6, 3)), rng.normal(size=(6, 4)), N=2, n_u=2, manifest={"seed": 7})
        checksum = save_dataset(tmp_path / "ds", ds)
        loaded, loaded_sha = load_dataset(tmp_path / "ds")
        assert loaded_sha == checksum
        assert np.array_equal(loaded.inputs, ds.inputs)
        assert np.array_equal(loaded.target_seqs, ds.target_seqs)
        assert loaded.manifest["seed"] == 7
        assert loaded.manifest["rows"] == 6

    def test_tampered_files(self, rng, tmp_path):
        ds = Dataset(rng.normal(size=(6, 3)), rng.normal(size=(6, 4)), N=2, n_u=2)
        save_dataset(tmp_path / "ds", ds)
        write_matrix(tmp_path / "ds" / INPUTS_FILE, np.zeros((6, 3)), {"kind": "dataset.inputs"})
        with pytest.raises(ArtifactCorrupted):
            load_dataset(tmp_path / "ds")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ArtifactCorrupted):
            load_dataset(tmp_path)


class TestSamplers:
    def test_quadcopter_window(self, quad):
        sampler = make_sampler(quad)
        assert_allclose(sampler.upper[:3], 2.0)
        assert_allclose(sampler.upper[6], 0.8 * math.pi / 9)
        assert_allclose(sampler.lower, -sampler.upper)

    def test_vehicle_window(self, kinematic):
        sampler = make_sampler(kinematic, {"gamma_v": 0.25})
        assert_allclose(sampler.lower[3], 0.75)
        assert_allclose(sampler.upper[3], 1.25)
        assert_allclose(sampler.upper[2], math.radians(10.0))

    def test_draw_inside(self, kinematic, rng):
        sampler = make_sampler(kinematic)
        for _ in range(20):
            x = sampler.draw(rng)
            assert np.all(x >= sampler.lower) and np.all(x <= sampler.upper)


class TestGenerate:
    def test_single_row_at_reference(self, quad, quad_ing):
        sampler = BoxSampler(quad.x_ref, quad.x_ref)
        ds = asyncio.run(generate_dataset(quad, quad_ing, sampler, M=1, seed=0, settings=FAST_DATASET))
        assert len(ds) == 1
        assert_allclose(ds.target_seqs[0], np.tile(quad.u_ref, (quad.N, 1)), atol=1e-6)
        assert ds.manifest["benchmark"] == "quadcopter"
        assert ds.manifest["outcomes"] == {"accepted": 1}

    def test_rows_are_feasible_and_deterministic(self, quad, quad_ing):
        sampler = BoxSampler(quad.x_ref - 0.05, quad.x_ref + 0.05)
        first = asyncio.run(generate_dataset(quad, quad_ing, sampler, M=3, seed=11, settings=FAST_DATASET))
        second = asyncio.run(generate_dataset(quad, quad_ing, sampler, M=3, seed=11, settings=FAST_DATASET))
        assert np.array_equal(first.inputs, second.inputs)
        assert np.array_equal(first.targets, second.targets)
        for x, u_seq in zip(first.inputs, first.target_seqs):
            assert is_feasible(quad, quad_ing, x, u_seq, slack=1e-6).feasible

    def test_jobs_do_not_change_rows(self, quad, quad_ing):
        sampler = BoxSampler(quad.x_ref - 0.05, quad.x_ref + 0.05)
        serial = asyncio.run(generate_dataset(quad, quad_ing, sampler, M=3, seed=5, settings=FAST_DATASET))
        parallel = asyncio.run(generate_dataset(quad, quad_ing, sampler, M=3, seed=5,
                                                settings=FAST_DATASET, jobs=2))
        assert np.array_equal(serial.inputs, parallel.inputs)
        assert np.array_equal(serial.targets, parallel.targets)

    def test_sampler_exhausted(self, quad, quad_ing):
        x = quad.x_ref.copy()
        x[6] = 1.0
        settings = {"chunk": 2, "probe": 5, "min_acceptance": 0.5}
        with pytest.raises(SamplerExhausted):
            asyncio.run(generate_dataset(quad, quad_ing, BoxSampler(x, x), M=2, seed=0, settings=settings))

    def test_dataset_size_checked(self, quad, quad_ing):
        with pytest.raises(ConfigError):
            asyncio.run(generate_dataset(quad, quad_ing, make_sampler(quad), M=0, seed=0))


class TestOptim:
    def test_adam_first_step(self):
        adam = Adam(3, lr=0.01)
        theta = adam.step(np.zeros(3), np.array([2.0, -0.5, 0.1]))
        assert_allclose(theta, [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_cosine_endpoints(self):
        assert cosine_lr(0, 10, 1e-3, 1e-5) == pytest.approx(1e-3)
        assert cosine_lr(9, 10, 1e-3, 1e-5) == pytest.approx(1e-5)
        lrs = [cosine_lr(e, 10, 1e-3, 1e-5) for e in range(10)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_early_stopping(self):
        stopper = EarlyStopping(patience=2)
        assert stopper.update(0, 1.0)
        assert not stopper.update(1, 1.0)
        assert stopper.update(2, 0.5)
        assert not stopper.should_stop
        stopper.update(3, 0.6)
        stopper.update(4, 0.7)
        assert stopper.should_stop
        assert stopper.best_epoch == 2


class TestTrain:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(val_fraction=1.0)
        cfg = TrainConfig.from_settings({"lr": 0.5}, seed=9)
        assert cfg.lr == 0.5 and cfg.seed == 9 and cfg.batch_size == 256

    def test_recovers_linear_map(self, rng):
        ds, G = linear_dataset(rng)
        policy = linear_policy(rng)
        cfg = TrainConfig(lr=0.02, lr_min=1e-6, batch_size=50, max_epochs=1500, patience=2000)
        policy, report = train(policy, ds, cfg, val_ds=ds)
        assert report.best_val_loss < 1e-6
        assert report.stop_reason == StopReason.MAX_EPOCHS
        assert_allclose(policy.net.weights[0], G, atol=1e-2)
        assert_allclose(policy(ds.inputs[0]), ds.target_seqs[0], atol=1e-2)

    def test_patience_stops_flat_loss(self, rng):
        ds, _ = linear_dataset(rng, M=20)
        cfg = TrainConfig(lr=0.0, lr_min=0.0, batch_size=8, max_epochs=50, patience=1)
        _, report = train(linear_policy(rng), ds, cfg)
        assert report.epochs_run == 2
        assert report.stop_reason == StopReason.EARLY_STOP
        assert report.best_epoch == 0

    def test_nan_targets(self, rng):
        ds, _ = linear_dataset(rng, M=10)
        ds.targets[3, 0] = np.nan
        cfg = TrainConfig(batch_size=10, max_epochs=5)
        with pytest.raises(NonFiniteLoss):
            train(linear_policy(rng), ds, cfg, val_ds=ds)

    def test_dimension_mismatch(self, rng):
        ds, _ = linear_dataset(rng, M=10, n_x=3)
        with pytest.raises(DimensionMismatch):
            train(linear_policy(rng, n_x=2), ds, TrainConfig(max_epochs=1))

    def test_same_seed_same_weights(self, rng):
        ds, _ = linear_dataset(rng, M=20)
        cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=20, seed=5)
        init = MlpPolicy.initialize(2, [4], 1, 2, np.random.default_rng(0))
        runs = []
        for _ in range(2):
            net = MlpPolicy(init.weights, init.biases, 1, 2)
            policy, _ = train(NeuralPolicy(net, Normalizer.identity(2, 1)), ds, cfg)
            runs.append(policy.net.get_params())
        assert np.array_equal(runs[0], runs[1])

    def test_rnn_loss_decreases(self, rng):
        X = rng.uniform(-1, 1, size=(40, 2))
        T = np.stack([np.sin(X[:, :1] * (t + 1)) for t in range(3)], axis=1)
        ds = Dataset(X, T.reshape(40, 3), N=3, n_u=1)
        policy = NeuralPolicy(RnnPolicy.initialize(2, 8, 1, 3, rng), Normalizer.identity(2, 1))
        _, report = train(policy, ds, TrainConfig(lr=0.01, batch_size=10, max_epochs=100, patience=100), val_ds=ds)
        assert report.best_val_loss < report.val_curve[0]

    def test_init_policy(self, kinematic, rng):
        ds = Dataset(rng.normal(size=(5, 4)), np.zeros((5, 2 * kinematic.N)), N=kinematic.N, n_u=2)
        widths = {"mlp_hidden": [6], "rnn_hidden": 5}
        policy = init_policy("rnn", kinematic, ds, widths, seed=0, feed="rollout")
        assert policy.net.n_h == 5
        assert policy.model is kinematic
        assert_allclose(policy.normalizer.x_mean, ds.inputs.mean(axis=0))
        mlp = init_policy("mlp", kinematic, ds, widths, seed=0)
        assert mlp.net.widths == [4, 6, 2 * kinematic.N]
        assert mlp.feed == "measured"
