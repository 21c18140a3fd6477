"""
Генерация датасета эксперта отбором начальных условий
"""
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import DEFAULTS
from errors import ConfigError, SamplerExhausted
from expert.controller import NmpcExpert
from feasibility.check import is_feasible
from models.benchmarks import BenchmarkModel
from models.constraints import constraint_violations
from policy.normalized import Normalizer
from terminal.ingredients import TerminalIngredients
from training.dataset import Dataset
from training.samplers import BoxSampler
from utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)

# (индекс попытки, x0, u_seq или None, итог)
AttemptResult = Tuple[int, np.ndarray, Optional[np.ndarray], str]


def _solve_chunk(model: BenchmarkModel, ing: TerminalIngredients, sampler: BoxSampler,
                 solver_settings: Mapping[str, Any], seed: int, indices: Sequence[int],
                 validation_tol: float) -> List[AttemptResult]:
    """Попытки с заданными индексами; выполняется в процессе-воркере"""
    expert = NmpcExpert(model, ing, solver_settings)
    results: List[AttemptResult] = []
    for idx in indices:
        x0 = sampler.draw(rng_for(seed, Stream.SAMPLER, idx))
        if constraint_violations(x0, None, model):
            results.append((idx, x0, None, "filtered"))
            continue
        sol = expert.solve(x0)
        if not sol.converged:
            results.append((idx, x0, None, sol.status.value))
            continue
        report = is_feasible(model, ing, x0, sol.u_seq, slack=validation_tol)
        if not report.feasible:
            results.append((idx, x0, None, "rejected"))
            continue
        results.append((idx, x0, sol.u_seq, "accepted"))
    return results


async def generate_dataset(model: BenchmarkModel, ing: TerminalIngredients, sampler: BoxSampler,
                           M: int, seed: int, settings: Optional[Mapping[str, Any]] = None,
                           solver_settings: Optional[Mapping[str, Any]] = None, jobs: int = 1,
                           progress: bool = False, lineage: Optional[Dict[str, Any]] = None) -> Dataset:
    """
    Собрать ровно M пар (x0, u*) отбором

    Попытка idx использует генератор rng_for(seed, SAMPLER, idx); строки
    принимаются в порядке индексов, поэтому результат не зависит от jobs.

    Args:
        model: Бенчмарк
        ing: Терминальные ингредиенты
        sampler: Окно начальных условий
        M: Требуемое число строк
        seed: Корневое зерно
        settings: Секция dataset конфигурации
        solver_settings: Секция solver конфигурации
        jobs: Число процессов (1 - без пула)
        progress: Показывать tqdm
        lineage: Поля родословной для манифеста

    Returns:
        Датасет с манифестом

    Raises:
        SamplerExhausted: Доля принятых ниже min_acceptance после probe попыток
    """
    if M < 1:
        raise ConfigError(f"Размер датасета должен быть >= 1, получено {M}")
    s = dict(DEFAULTS["dataset"], **(settings or {}))
    chunk = int(s["chunk"])
    probe = int(s["probe"])
    min_acceptance = float(s["min_acceptance"])
    validation_tol = float(s["validation_tol"])
    solver_settings = dict(solver_settings or {})

    loop = asyncio.get_running_loop()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    accepted: List[Tuple[np.ndarray, np.ndarray]] = []
    counts: Dict[str, int] = {}
    attempts = 0
    bar = tqdm(total=M, desc=f"Датасет {model.name}", disable=not progress)

    try:
        while len(accepted) < M:
            starts = range(attempts, attempts + chunk * max(jobs, 1), chunk)
            batches = [list(range(a, a + chunk)) for a in starts]
            if pool is None:
                chunks = [_solve_chunk(model, ing, sampler, solver_settings, seed, b, validation_tol)
                          for b in batches]
            else:
                futures = [
                    loop.run_in_executor(pool, _solve_chunk, model, ing, sampler, solver_settings,
                                         seed, b, validation_tol)
                    for b in batches
                ]
                chunks = await asyncio.gather(*futures)

            # попытки после M-й принятой не учитываются
            for idx, x0, u_seq, outcome in (r for results in chunks for r in results):
                if len(accepted) >= M:
                    break
                attempts += 1
                counts[outcome] = counts.get(outcome, 0) + 1
                if u_seq is not None:
                    accepted.append((x0, u_seq))
                    bar.update(1)

            rate = len(accepted) / attempts
            if attempts >= probe and rate < min_acceptance:
                raise SamplerExhausted(
                    f"{model.name}: принято {len(accepted)} из {attempts} попыток "
                    f"({100 * rate:.3f}% < {100 * min_acceptance:.3f}%)"
                )
    finally:
        bar.close()
        if pool is not None:
            pool.shutdown()

    logger.info(f"{model.name}: принято {len(accepted)} строк из {attempts} попыток, итоги {counts}")
    if counts.get("rejected"):
        logger.warning(f"{model.name}: {counts['rejected']} решений эксперта не прошли повторную проверку")

    inputs = np.array([x for x, _ in accepted])
    targets = np.array([u.reshape(-1) for _, u in accepted])
    manifest = {
        "kind": "dataset",
        "benchmark": model.name,
        "seed": int(seed),
        "sampler": sampler.to_dict(),
        "attempts": attempts,
        "outcomes": counts,
        "normalization": Normalizer.fit(inputs, model).to_dict(),
    }
    manifest.update(lineage or {})
    return Dataset(inputs, targets, model.N, model.n_u, manifest)
