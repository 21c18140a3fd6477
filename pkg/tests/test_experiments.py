import asyncio
import math

import numpy as np
import pytest

from harness.experiments import compare_architectures, epsilon_sweep, scaling_study
from policy.networks import rnn_param_count
from tests.conftest import ConstantPolicy, terminal_point, terminal_sequence
from training.dataset import Dataset
from training.trainer import TrainConfig

WIDTHS = {"mlp_hidden": [8], "rnn_hidden": 8}


def terminal_rows(model, ing, n, seed):
    """Строки (x, u) терминального регулятора внутри 0.2 * alpha"""
    rng = np.random.default_rng(seed)
    xs = np.array([terminal_point(model, ing, rng, 0.2) for _ in range(n)])
    us = np.array([terminal_sequence(model, ing, x).reshape(-1) for x in xs])
    return Dataset(xs, us, model.N, model.n_u)


@pytest.fixture(scope="module")
def splits(quad, quad_ing):
    return terminal_rows(quad, quad_ing, 16, 1), terminal_rows(quad, quad_ing, 6, 2), terminal_rows(quad, quad_ing, 4, 3)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(batch_size=4, max_epochs=3, patience=10, seed=0, log_every=0)


class TestScalingStudy:
    def test_nested_fractions(self, quad, quad_ing, splits, tiny_cfg):
        train_ds, val_ds, test_ds = splits
        rows = asyncio.run(scaling_study(quad, quad_ing, train_ds, val_ds, test_ds, [0.25, 0.5, 1.0],
                                         WIDTHS, tiny_cfg, steps=5, n_rollouts=2, arch="mlp"))
        assert len(rows) == 3
        assert [r["rows"] for r in rows] == [4, 8, 16]
        assert [r["fraction"] for r in rows] == [0.25, 0.5, 1.0]
        for r in rows:
            assert set(r) == {"fraction", "rows", "epochs", "best_val_loss", "feas_pct", "safe_pct", "interv_pct"}
            assert 1 <= r["epochs"] <= 3
            assert math.isfinite(r["best_val_loss"])
            for key in ("feas_pct", "safe_pct", "interv_pct"):
                assert 0.0 <= r[key] <= 100.0

    def test_repeatable(self, quad, quad_ing, splits, tiny_cfg):
        train_ds, val_ds, test_ds = splits
        runs = [
            asyncio.run(scaling_study(quad, quad_ing, train_ds, val_ds, test_ds, [0.5], WIDTHS, tiny_cfg,
                                      steps=3, n_rollouts=1))
            for _ in range(2)
        ]
        assert runs[0] == runs[1]


class TestCompareArchitectures:
    def test_medians_and_curves(self, quad, quad_ing, splits, tiny_cfg):
        train_ds, val_ds, test_ds = splits
        results = compare_architectures(quad, quad_ing, train_ds, val_ds, test_ds.inputs, WIDTHS, tiny_cfg,
                                        seeds=[0, 1])
        assert set(results) == {"mlp", "rnn"}
        for arch, res in results.items():
            assert sorted(res["curves"]) == [f"{arch}_seed0_val", f"{arch}_seed1_val"]
            assert all(1 <= len(c) <= 3 for c in res["curves"].values())
            assert math.isfinite(res["best_val_loss"])
            assert 1 <= res["epochs"] <= 3
            assert 0.0 <= res["feas_pct"] <= 100.0

    def test_rnn_is_smaller_than_mlp(self, quad, quad_ing, splits, tiny_cfg):
        train_ds, val_ds, test_ds = splits
        results = compare_architectures(quad, quad_ing, train_ds, val_ds, test_ds.inputs, WIDTHS, tiny_cfg,
                                        seeds=[0])
        # выход MLP растет с горизонтом, RNN делит выходной слой между шагами
        assert results["rnn"]["params"] == rnn_param_count(quad.n_x, 8, quad.n_u) == 179
        assert results["mlp"]["params"] == (10 * 8 + 8) + (8 + 1) * quad.N * quad.n_u == 358
        assert results["rnn"]["params"] < results["mlp"]["params"]


class TestEpsilonSweep:
    def test_hover_loses_safety_as_eps_grows(self, quad, quad_ing, hover_seq):
        epsilons = [0.0, 1e-3, 10.0]
        xs = np.tile(quad.x_ref, (3, 1))
        us = np.tile(hover_seq.reshape(-1), (3, 1))
        summaries = asyncio.run(epsilon_sweep(quad, quad_ing, ConstantPolicy(hover_seq), xs, us, steps=30,
                                              epsilons=epsilons, seed=0))
        assert [s.epsilon for s in summaries] == epsilons
        safe = [s.safe_pct for s in summaries]
        assert safe[0] == safe[1] == 100.0
        assert all(a >= b for a, b in zip(safe, safe[1:]))
        # насыщенный крен дольше 0.3 с выводит угол за pi/9
        assert safe[-1] < 100.0
        assert summaries[0].wrapped_safe_pct == 100.0

    def test_same_rows_same_metrics(self, quad, quad_ing, hover_seq):
        xs = quad.x_ref[None, :]
        us = hover_seq.reshape(1, -1)
        first = asyncio.run(epsilon_sweep(quad, quad_ing, ConstantPolicy(hover_seq), xs, us, 10, [0.05], seed=2))
        second = asyncio.run(epsilon_sweep(quad, quad_ing, ConstantPolicy(hover_seq), xs, us, 10, [0.05], seed=2))
        assert [s.to_dict() for s in first] == [s.to_dict() for s in second]
