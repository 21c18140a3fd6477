"""
Составные эксперименты: масштабирование по объему данных, сравнение
архитектур, развертка по величине возмущения
"""
import logging
from dataclasses import replace
from statistics import median
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np

from harness.evaluation import MetricsSummary, closed_loop_eval, open_loop_eval
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients
from training.dataset import Dataset
from training.trainer import TrainConfig, init_policy, train

logger = logging.getLogger(__name__)


async def scaling_study(model: BenchmarkModel, ing: TerminalIngredients, train_ds: Dataset,
                        val_ds: Dataset, test_ds: Dataset, fractions: Sequence[float],
                        widths: Mapping[str, Any], cfg: TrainConfig, steps: int,
                        n_rollouts: int, eps: float = 0.0, arch: str = "rnn",
                        feed: str = "measured", jobs: int = 1) -> List[Dict[str, Any]]:
    """
    Обучение на вложенных долях обучающей выборки

    Доля f берет первые round(f * len) строк, поэтому меньшие выборки
    вложены в большие. Для каждой доли: эпохи до остановки, допустимость
    в разомкнутом контуре, Safe % наивной политики и Interv. % обертки.
    """
    rows = []
    for fraction in fractions:
        n = max(1, int(round(fraction * len(train_ds))))
        subset = train_ds.subset(np.arange(n))
        policy = init_policy(arch, model, train_ds, widths, cfg.seed, feed)
        policy, report = train(policy, subset, cfg, val_ds=val_ds)
        feas = open_loop_eval(model, ing, policy, test_ds.inputs)
        k = min(n_rollouts, len(test_ds))
        summary, _, _ = await closed_loop_eval(model, ing, policy, test_ds.inputs[:k], test_ds.targets[:k],
                                               steps, eps, cfg.seed, jobs=jobs)
        rows.append({
            "fraction": float(fraction),
            "rows": n,
            "epochs": report.epochs_run,
            "best_val_loss": report.best_val_loss,
            "feas_pct": feas,
            "safe_pct": summary.safe_pct,
            "interv_pct": summary.interv_pct,
        })
        logger.info(f"{model.name}: доля {fraction} ({n} строк) -> {rows[-1]}")
    return rows


def compare_architectures(model: BenchmarkModel, ing: TerminalIngredients, train_ds: Dataset,
                          val_ds: Dataset, test_states: np.ndarray, widths: Mapping[str, Any],
                          cfg: TrainConfig, seeds: Sequence[int],
                          archs: Sequence[str] = ("mlp", "rnn")) -> Dict[str, Dict[str, Any]]:
    """
    MLP против RNN при одинаковом бюджете эпох

    Returns:
        {arch: медианы best_val_loss, epochs, feas_pct по зернам и кривые валидации}
    """
    results: Dict[str, Dict[str, Any]] = {}
    for arch in archs:
        losses, epochs, feas, curves = [], [], [], {}
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed))
            policy = init_policy(arch, model, train_ds, widths, run_cfg.seed)
            policy, report = train(policy, train_ds, run_cfg, val_ds=val_ds)
            losses.append(report.best_val_loss)
            epochs.append(report.epochs_run)
            feas.append(open_loop_eval(model, ing, policy, test_states))
            curves[f"{arch}_seed{seed}_val"] = report.val_curve
        results[arch] = {
            "params": policy.net.param_count,
            "best_val_loss": median(losses),
            "epochs": median(epochs),
            "feas_pct": median(feas),
            "curves": curves,
        }
        logger.info(
            f"{model.name}/{arch}: медиана best_val={results[arch]['best_val_loss']:.3e}, "
            f"эпох {results[arch]['epochs']}, Feas. {results[arch]['feas_pct']:.1f}%"
        )
    return results


async def epsilon_sweep(model: BenchmarkModel, ing: TerminalIngredients, policy,
                        x_rows: np.ndarray, u_rows: np.ndarray, steps: int,
                        epsilons: Sequence[float], seed: int, jobs: int = 1) -> List[MetricsSummary]:
    """Замкнутый контур для ряда границ возмущения на одних и тех же строках"""
    summaries = []
    for eps in epsilons:
        summary, _, _ = await closed_loop_eval(model, ing, policy, x_rows, u_rows, steps, float(eps), seed, jobs=jobs)
        summaries.append(summary)
    return summaries
