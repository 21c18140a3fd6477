import asyncio
import hashlib

import pytest
import yaml

from errors import LineageMismatch
from main import build_parser, main
from training.dataset import load_dataset
from utils.artifacts import read_yaml

TINY = {
    "dataset": {"chunk": 2, "probe": 50, "min_acceptance": 0.05},
    "sampler": {"quadcopter": {"pos": 0.1, "vel": 0.05, "attitude_frac": 0.1, "omega": 0.05}},
    "policy": {"widths": {"desk": {"mlp_hidden": [8], "rnn_hidden": 8}}},
    "train": {"max_epochs": 3, "batch_size": 4, "log_every": 0},
    "eval": {"n_rollouts": 1, "n_open_loop": 1, "steps": {"quadcopter": 3}},
}


def run(*argv):
    return asyncio.run(main(list(argv)))


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump(TINY), encoding="utf-8")
    return tmp_path, ["--config", str(config), "--out", str(tmp_path / "runs"), "--seed", "0"]


class TestParser:
    def test_unknown_benchmark(self):
        with pytest.raises(SystemExit) as e:
            build_parser().parse_args(["design-terminal", "-b", "bicycle"])
        assert e.value.code == 2

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_eval_closed_options(self):
        args = build_parser().parse_args(["--seed", "4", "eval-closed", "-b", "dynamic", "--policy", "mlp",
                                          "--eps", "0.1"])
        assert (args.seed, args.benchmark, args.policy, args.eps) == (4, "dynamic", "mlp", 0.1)


class TestPipeline:
    def test_design_terminal_is_deterministic(self, workspace):
        tmp_path, common = workspace
        assert run(*common, "design-terminal", "-b", "quadcopter") == 0
        path = tmp_path / "runs" / "quadcopter" / "ingredients.txt"
        first = path.read_text(encoding="utf-8")
        run(*common, "design-terminal", "-b", "quadcopter")
        assert path.read_text(encoding="utf-8") == first
        meta = read_yaml(tmp_path / "runs" / "quadcopter" / "ingredients.meta.yaml")
        assert meta["sha256"] == hashlib.sha256(first.encode("utf-8")).hexdigest()

    def test_end_to_end(self, workspace):
        tmp_path, common = workspace
        root = tmp_path / "runs" / "quadcopter"
        run(*common, "design-terminal", "-b", "quadcopter")
        run(*common, "gen-data", "-b", "quadcopter", "--rows", "6")
        ds, _ = load_dataset(root / "dataset")
        assert len(ds) == 6
        assert "ingredients_sha256" in ds.manifest

        run(*common, "train", "-b", "quadcopter", "--arch", "mlp")
        assert (root / "mlp" / "checkpoint.bin").exists()
        report = read_yaml(root / "mlp" / "train_report.yaml")
        assert report["epochs_run"] <= 3

        run(*common, "eval-open", "-b", "quadcopter", "--policy", "mlp")
        metrics = read_yaml(root / "mlp" / "metrics_open.yaml")
        assert 0.0 <= metrics["feas_pct"] <= 100.0
        assert metrics["n_states"] == 1

        run(*common, "eval-closed", "-b", "quadcopter", "--policy", "mlp")
        closed = read_yaml(root / "mlp" / "metrics_closed.yaml")
        assert closed["n_rollouts"] == 1
        assert closed["wrapped_safe_pct"] == 100.0
        assert (root / "mlp" / "traces" / "wrapped_0000.bin").exists()

        assert run(*common, "report", "-b", "quadcopter") == 0

    def test_seeded_pipeline_is_bit_exact(self, tmp_path):
        config = tmp_path / "tiny.yaml"
        config.write_text(yaml.safe_dump(TINY), encoding="utf-8")
        artifacts = [
            "ingredients.txt",
            "ingredients.meta.yaml",
            "dataset/manifest.yaml",
            "dataset/inputs.bin",
            "dataset/targets.bin",
            "mlp/checkpoint.bin",
            "mlp/train_report.yaml",
            "mlp/metrics_open.yaml",
            "mlp/metrics_closed.yaml",
            "mlp/traces/naive_0000.bin",
            "mlp/traces/wrapped_0000.bin",
        ]
        digests = []
        for name in ("first", "second"):
            common = ["--config", str(config), "--out", str(tmp_path / name), "--seed", "3"]
            run(*common, "design-terminal", "-b", "quadcopter")
            run(*common, "gen-data", "-b", "quadcopter", "--rows", "6")
            run(*common, "train", "-b", "quadcopter", "--arch", "mlp")
            run(*common, "eval-open", "-b", "quadcopter", "--policy", "mlp")
            run(*common, "eval-closed", "-b", "quadcopter", "--policy", "mlp")
            root = tmp_path / name / "quadcopter"
            digests.append({a: hashlib.sha256((root / a).read_bytes()).hexdigest() for a in artifacts})

        assert digests[0] == digests[1]
        first = tmp_path / "first" / "quadcopter"
        second = tmp_path / "second" / "quadcopter"
        for a in artifacts:
            assert (first / a).read_bytes() == (second / a).read_bytes(), a
        report = read_yaml(first / "mlp" / "train_report.yaml")
        assert report["checkpoint_sha256"] == read_yaml(second / "mlp" / "train_report.yaml")["checkpoint_sha256"]

    def test_stale_dataset_is_rejected(self, workspace, tmp_path):
        _, common = workspace
        run(*common, "design-terminal", "-b", "quadcopter")
        run(*common, "gen-data", "-b", "quadcopter", "--rows", "2")

        changed = dict(TINY, terminal={"cost_inflation": 1.5})
        other = tmp_path / "changed.yaml"
        other.write_text(yaml.safe_dump(changed), encoding="utf-8")
        run("--config", str(other), *common[2:], "design-terminal", "-b", "quadcopter")

        with pytest.raises(LineageMismatch) as e:
            run(*common, "train", "-b", "quadcopter", "--arch", "mlp")
        assert e.value.exit_code == 5


@pytest.mark.slow
@pytest.mark.parametrize("benchmark", ["quadcopter", "kinematic", "dynamic"])
def test_desk_pipeline(benchmark, tmp_path):
    """Полный конвейер на пресете desk (долго)"""
    common = ["--out", str(tmp_path), "--seed", "0"]
    run(*common, "design-terminal", "-b", benchmark)
    run(*common, "gen-data", "-b", benchmark)
    run(*common, "train", "-b", benchmark, "--arch", "rnn")
    run(*common, "eval-open", "-b", benchmark, "--policy", "rnn")
    run(*common, "eval-closed", "-b", benchmark, "--policy", "rnn")
    closed = read_yaml(tmp_path / benchmark / "rnn" / "metrics_closed.yaml")
    assert closed["wrapped_safe_pct"] == 100.0
