import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import BENCHMARK_NAMES, Config, RunConfig, load_run_config
from database.db import RunRegistry
from errors import ArtifactCorrupted, LineageMismatch, SampcError
from expert.controller import ExpertPolicy, NmpcExpert
from harness.evaluation import closed_loop_eval, open_loop_eval
from harness.experiments import compare_architectures, epsilon_sweep, scaling_study
from models.benchmarks import BenchmarkModel, build_model
from policy.checkpoint import load_checkpoint, save_checkpoint
from terminal.design import design_terminal
from terminal.ingredients import TerminalIngredients, load_ingredients, save_ingredients
from training.dataset import Dataset, load_dataset, save_dataset, split
from training.generate import generate_dataset
from training.samplers import make_sampler
from training.trainer import TrainConfig, init_policy, train
from utils.artifacts import read_yaml, write_curves_csv, write_matrix, write_yaml
from utils.formatter import ReportFormatter
from utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)

POLICY_KINDS = ("mlp", "rnn", "random", "expert")


def setup_logging(out_dir: Path):
    """Настройка логирования: консоль и файл в каталоге артефактов"""
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(out_dir / Config.LOG_FILE, encoding='utf-8')
        ]
    )


class LabPipeline:
    """Команды конвейера: синтез, данные, обучение, оценка, отчеты"""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.model: BenchmarkModel = build_model(cfg.benchmark, cfg.model_settings)
        self.root = cfg.out_dir / cfg.benchmark
        self.registry = RunRegistry(str(cfg.out_dir / Config.REGISTRY_NAME))

    # Пути артефактов

    @property
    def ingredients_path(self) -> Path:
        return self.root / "ingredients.txt"

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    def run_dir(self, label: str) -> Path:
        return self.root / label

    def checkpoint_path(self, arch: str) -> Path:
        return self.run_dir(arch) / "checkpoint.bin"

    async def on_startup(self):
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        await self.registry.init_db()
        logger.info(f"Бенчмарк {self.cfg.benchmark}, зерно {self.cfg.seed}, воркеров {self.cfg.jobs}")

    # Загрузка с проверкой родословной

    async def _load_ingredients(self) -> Tuple[TerminalIngredients, str]:
        if not self.ingredients_path.exists():
            raise ArtifactCorrupted(f"Нет ингредиентов {self.ingredients_path}, запустите design-terminal")
        ing, checksum = load_ingredients(self.ingredients_path)
        await self.registry.verify_lineage(str(self.ingredients_path), checksum, None)
        return ing, checksum

    async def _load_dataset(self, ing_sha: str) -> Tuple[Dataset, str]:
        ds, checksum = load_dataset(self.dataset_dir)
        if ds.manifest.get("ingredients_sha256") != ing_sha:
            raise LineageMismatch(
                f"Датасет {self.dataset_dir} построен для других ингредиентов "
                f"({ds.manifest.get('ingredients_sha256')} != {ing_sha})"
            )
        await self.registry.verify_lineage(str(self.dataset_dir), checksum, ing_sha)
        return ds, checksum

    def _splits(self, ds: Dataset) -> Tuple[Dataset, Dataset, Dataset]:
        train_s = self.cfg.section("train")
        return split(ds, float(train_s["val_fraction"]), self.cfg.seed, float(train_s["test_fraction"]))

    async def _policy(self, kind: str, ing: TerminalIngredients, ing_sha: str,
                      ds: Optional[Dataset], ds_sha: Optional[str],
                      checkpoint: Optional[str]) -> Tuple[Any, Dict[str, Any]]:
        """Политика для оценки и ее описание для метрик"""
        if kind == "expert":
            expert = NmpcExpert(self.model, ing, self.cfg.section("solver"))
            return ExpertPolicy(expert), {"policy": "expert"}
        if kind == "random":
            if ds is None:
                raise ArtifactCorrupted("Для случайной политики нужен датасет (константы нормировки)")
            policy = init_policy("rnn", self.model, ds, self.cfg.policy_widths,
                                 int(rng_for(self.cfg.seed, Stream.POLICY_PROBE).integers(2 ** 31)))
            return policy, {"policy": "random"}

        path = Path(checkpoint) if checkpoint else self.checkpoint_path(kind)
        policy, header = load_checkpoint(path, self.model)
        meta = header.get("meta", {})
        if meta.get("ingredients_sha256") != ing_sha or (ds_sha is not None and meta.get("dataset_sha256") != ds_sha):
            raise LineageMismatch(f"Чекпоинт {path} обучен на других артефактах")
        await self.registry.verify_lineage(str(path), header["sha256"], ds_sha)
        return policy, {"policy": kind, "checkpoint_sha256": header["sha256"], "epochs_to_stop": meta.get("epochs_run")}

    async def _eval_rows(self, ing: TerminalIngredients, ds: Optional[Dataset], M: int) -> Tuple[np.ndarray, np.ndarray]:
        """Начальные строки: тестовая часть датасета или свежая выборка с зерном оценки"""
        if ds is not None:
            _, _, test = self._splits(ds)
            return test.inputs[:M], test.targets[:M]
        seed = int(rng_for(self.cfg.seed, Stream.EVAL).integers(2 ** 31))
        fresh = await generate_dataset(
            self.model, ing, make_sampler(self.model, self.cfg.sampler_settings), M, seed,
            settings=self.cfg.section("dataset"), solver_settings=self.cfg.section("solver"),
            jobs=self.cfg.jobs, progress=Config.PROGRESS,
        )
        return fresh.inputs, fresh.targets

    # Команды

    async def cmd_design_terminal(self) -> str:
        ing = design_terminal(self.model, self.cfg.section("terminal"))
        checksum = save_ingredients(self.ingredients_path, ing)
        write_yaml(self.root / "ingredients.meta.yaml", {
            "kind": "ingredients", "sha256": checksum, "config": self.cfg.to_dict(),
        })
        await self.registry.register_artifact("ingredients", str(self.ingredients_path), checksum, self.model.name)
        print(ReportFormatter.format_terminal(self.model.name, {
            "rho": ing.rho_f, "alpha": ing.alpha, "epsilon": ing.epsilon, "kappa": ing.kappa, "checksum": checksum,
        }))
        return checksum

    async def cmd_gen_data(self, rows: Optional[int] = None) -> str:
        ing, ing_sha = await self._load_ingredients()
        sampler = make_sampler(self.model, self.cfg.sampler_settings)
        ds = await generate_dataset(
            self.model, ing, sampler, rows or self.cfg.dataset_size, self.cfg.seed,
            settings=self.cfg.section("dataset"), solver_settings=self.cfg.section("solver"),
            jobs=self.cfg.jobs, progress=Config.PROGRESS,
            lineage={"ingredients_sha256": ing_sha, "config": self.cfg.to_dict()},
        )
        checksum = save_dataset(self.dataset_dir, ds)
        await self.registry.register_artifact("dataset", str(self.dataset_dir), checksum, self.model.name, ing_sha)
        print(f"Датасет {self.model.name}: {len(ds)} строк, sha256 {checksum}")
        return checksum

    async def cmd_train(self, arch: str) -> str:
        ing, ing_sha = await self._load_ingredients()
        ds, ds_sha = await self._load_dataset(ing_sha)
        train_ds, val_ds, test_ds = self._splits(ds)
        tcfg = TrainConfig.from_settings(self.cfg.section("train"), self.cfg.seed)
        feed = self.cfg.section("policy")["rnn_feed"] if arch == "rnn" else "measured"

        policy = init_policy(arch, self.model, ds, self.cfg.policy_widths, self.cfg.seed, feed)
        policy, report = train(policy, train_ds, tcfg, val_ds=val_ds, progress=Config.PROGRESS)

        run_dir = self.run_dir(arch)
        meta = {
            "benchmark": self.model.name,
            "seed": self.cfg.seed,
            "ingredients_sha256": ing_sha,
            "dataset_sha256": ds_sha,
            "split": {"val_fraction": tcfg.val_fraction, "test_fraction": self.cfg.section("train")["test_fraction"],
                      "rows": [len(train_ds), len(val_ds), len(test_ds)]},
            "config": self.cfg.to_dict(),
        }
        meta.update(report.to_dict())
        checksum = save_checkpoint(self.checkpoint_path(arch), policy, meta)
        write_yaml(run_dir / "train_report.yaml", dict(report.to_dict(), checkpoint_sha256=checksum))
        write_curves_csv(run_dir / "curves.csv", {"train": report.train_curve, "val": report.val_curve})
        await self.registry.register_artifact("checkpoint", str(self.checkpoint_path(arch)), checksum,
                                              self.model.name, ds_sha)
        print(ReportFormatter.format_train(arch, report.to_dict()))
        return checksum

    async def _eval_inputs(self, kind: str, checkpoint: Optional[str]):
        ing, ing_sha = await self._load_ingredients()
        ds, ds_sha = (None, None)
        if (self.dataset_dir / "manifest.yaml").exists():
            ds, ds_sha = await self._load_dataset(ing_sha)
        policy, info = await self._policy(kind, ing, ing_sha, ds, ds_sha, checkpoint)
        info.update({"ingredients_sha256": ing_sha, "dataset_sha256": ds_sha, "config": self.cfg.to_dict()})
        return ing, ds, policy, info

    async def cmd_eval_open(self, kind: str, checkpoint: Optional[str] = None) -> Dict[str, Any]:
        ing, ds, policy, info = await self._eval_inputs(kind, checkpoint)
        M = int(self.cfg.section("eval")["n_open_loop"])
        states, _ = await self._eval_rows(ing, ds, M)
        feas = open_loop_eval(self.model, ing, policy, states, slack=float(self.cfg.section("feasibility")["slack"]),
                              progress=Config.PROGRESS)
        metrics = dict(info, feas_pct=feas, n_states=int(states.shape[0]))
        if hasattr(policy, "net"):
            metrics["params"] = policy.net.param_count
        write_yaml(self.run_dir(kind) / "metrics_open.yaml", metrics)
        print(ReportFormatter.format_open_loop({self.model.name: {kind: metrics}}))
        return metrics

    async def cmd_eval_closed(self, kind: str, checkpoint: Optional[str] = None,
                              eps: Optional[float] = None) -> Dict[str, Any]:
        ing, ds, policy, info = await self._eval_inputs(kind, checkpoint)
        eval_s = self.cfg.section("eval")
        eps = float(eval_s["epsilon"] if eps is None else eps)
        x_rows, u_rows = await self._eval_rows(ing, ds, int(eval_s["n_rollouts"]))
        seed = self.cfg.seed
        summary, naive, wrapped = await closed_loop_eval(
            self.model, ing, policy, x_rows, u_rows, self.cfg.eval_steps, eps, seed,
            jobs=self.cfg.jobs, progress=Config.PROGRESS,
        )
        summary.epochs_to_stop = info.get("epochs_to_stop")

        run_dir = self.run_dir(kind)
        run_id = f"{self.model.name}/{kind}/eps={eps:g}"
        for i, (n, w) in enumerate(zip(naive, wrapped)):
            write_matrix(run_dir / "traces" / f"naive_{i:04d}.bin", n.trace(), {"outcome": n.outcome.value})
            write_matrix(run_dir / "traces" / f"wrapped_{i:04d}.bin", w.trace(), {"outcome": w.outcome.value})
            await self.registry.log_decisions(run_id, i, [d.to_dict() for d in w.decisions])

        metrics = dict(info, **summary.to_dict())
        sweep = eval_s.get("epsilon_sweep") or []
        if sweep:
            sweeps = await epsilon_sweep(self.model, ing, policy, x_rows, u_rows, self.cfg.eval_steps,
                                         sweep, seed, jobs=self.cfg.jobs)
            metrics["epsilon_sweep"] = [s.to_dict() for s in sweeps]
        write_yaml(run_dir / "metrics_closed.yaml", metrics)
        key = f"{self.model.name}/{kind}"
        print(ReportFormatter.format_closed_loop({key: metrics}))
        print(ReportFormatter.format_reasons({key: metrics}))
        return metrics

    async def cmd_scale(self) -> List[Dict[str, Any]]:
        ing, ing_sha = await self._load_ingredients()
        ds, _ = await self._load_dataset(ing_sha)
        train_ds, val_ds, test_ds = self._splits(ds)
        eval_s = self.cfg.section("eval")
        rows = await scaling_study(
            self.model, ing, train_ds, val_ds, test_ds, eval_s["scaling_fractions"], self.cfg.policy_widths,
            TrainConfig.from_settings(self.cfg.section("train"), self.cfg.seed), self.cfg.eval_steps,
            int(eval_s["n_rollouts"]), float(eval_s["epsilon"]), feed=self.cfg.section("policy")["rnn_feed"],
            jobs=self.cfg.jobs,
        )
        write_yaml(self.root / "scaling.yaml", {"rows": rows, "config": self.cfg.to_dict()})
        print(ReportFormatter.format_scaling(self.model.name, rows))
        return rows

    async def cmd_report(self, compare: bool = False):
        if compare:
            ing, ing_sha = await self._load_ingredients()
            ds, _ = await self._load_dataset(ing_sha)
            train_ds, val_ds, test_ds = self._splits(ds)
            results = compare_architectures(
                self.model, ing, train_ds, val_ds, test_ds.inputs, self.cfg.policy_widths,
                TrainConfig.from_settings(self.cfg.section("train"), self.cfg.seed),
                self.cfg.section("eval")["comparison_seeds"],
            )
            curves = {name: c for r in results.values() for name, c in r["curves"].items()}
            write_curves_csv(self.root / "comparison_curves.csv", curves)
            write_yaml(self.root / "comparison.yaml", ReportFormatter.summary_dict(results))

        open_loop: Dict[str, Dict[str, Any]] = {}
        closed_loop: Dict[str, Dict[str, Any]] = {}
        for benchmark in BENCHMARK_NAMES:
            root = self.cfg.out_dir / benchmark
            for path in sorted(root.glob("*/metrics_open.yaml")):
                open_loop.setdefault(benchmark, {})[path.parent.name] = read_yaml(path)
            for path in sorted(root.glob("*/metrics_closed.yaml")):
                closed_loop[f"{benchmark}/{path.parent.name}"] = read_yaml(path)
            for path in sorted(root.glob("*/train_report.yaml")):
                report = read_yaml(path)
                entry = open_loop.setdefault(benchmark, {}).setdefault(path.parent.name, {})
                entry.setdefault("epochs", report.get("epochs_run"))
            if (root / "comparison.yaml").exists():
                print(ReportFormatter.format_comparison(benchmark, read_yaml(root / "comparison.yaml")))
            if (root / "scaling.yaml").exists():
                print(ReportFormatter.format_scaling(benchmark, read_yaml(root / "scaling.yaml")["rows"]))

        if open_loop:
            print(ReportFormatter.format_open_loop(open_loop))
        if closed_loop:
            print(ReportFormatter.format_closed_loop(closed_loop))
            print(ReportFormatter.format_reasons(closed_loop))
        if not (open_loop or closed_loop):
            logger.warning(f"В {self.cfg.out_dir} нет сохраненных метрик")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sampc", description="Лаборатория безопасного приближенного MPC")
    parser.add_argument("--config", help="YAML-конфигурация запуска (SAMPC_CONFIG)")
    parser.add_argument("--seed", type=int, help="Корневое зерно (SAMPC_SEED)")
    parser.add_argument("--jobs", type=int, help="Число процессов (SAMPC_JOBS)")
    parser.add_argument("--out", help="Каталог артефактов (SAMPC_OUT)")

    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--benchmark", "-b", required=True, choices=BENCHMARK_NAMES)
        return p

    command("design-terminal", "Синтез терминальных ингредиентов")
    p = command("gen-data", "Генерация датасета эксперта")
    p.add_argument("--rows", type=int, help="Число строк (по умолчанию из пресета)")
    p = command("train", "Обучение политики")
    p.add_argument("--arch", required=True, choices=("mlp", "rnn"))
    for name, help_text in (("eval-open", "Допустимость в разомкнутом контуре"),
                            ("eval-closed", "Замкнутый контур: Safe и Interv.")):
        p = command(name, help_text)
        p.add_argument("--policy", default="rnn", choices=POLICY_KINDS)
        p.add_argument("--checkpoint", help="Путь к чекпоинту (по умолчанию <out>/<benchmark>/<policy>/)")
        if name == "eval-closed":
            p.add_argument("--eps", type=float, help="Граница возмущения входа")
    p = command("report", "Сводные таблицы по сохраненным метрикам")
    p.add_argument("--compare", action="store_true", help="Сначала сравнить архитектуры на этом бенчмарке")
    command("scale", "Масштабирование по объему данных")
    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа в приложение"""
    args = build_parser().parse_args(argv)
    cfg = load_run_config(args.benchmark, path=args.config, seed=args.seed, jobs=args.jobs, out_dir=args.out)
    setup_logging(cfg.out_dir)

    pipeline = LabPipeline(cfg)
    await pipeline.on_startup()
    if args.command == "design-terminal":
        await pipeline.cmd_design_terminal()
    elif args.command == "gen-data":
        await pipeline.cmd_gen_data(args.rows)
    elif args.command == "train":
        await pipeline.cmd_train(args.arch)
    elif args.command == "eval-open":
        await pipeline.cmd_eval_open(args.policy, args.checkpoint)
    elif args.command == "eval-closed":
        await pipeline.cmd_eval_closed(args.policy, args.checkpoint, args.eps)
    elif args.command == "report":
        await pipeline.cmd_report(args.compare)
    elif args.command == "scale":
        await pipeline.cmd_scale()
    return 0


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Остановлено пользователем")
        sys.exit(130)
    except SampcError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        sys.exit(e.exit_code)
    except Exception as e:
        logger.error(f"Неожиданная ошибка: {e}", exc_info=True)
        sys.exit(1)
