"""
Протоколы оценки: допустимость в разомкнутом контуре, безопасность и
вмешательства обертки в замкнутом
"""
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from errors import EmptyTestSet, NonFiniteState, SampcError
from feasibility.check import DEFAULT_SLACK, evaluate_sequence, is_feasible
from harness.rollout import NaiveController, Outcome, RolloutRecord, WrappedController, closed_loop_run
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients
from wrapper.safe import CandidateSource, Reason, shift_append

logger = logging.getLogger(__name__)


@dataclass
class MetricsSummary:
    n_rollouts: int
    safe_pct: float
    wrapped_safe_pct: float
    interv_pct: float
    reason_pcts: Dict[str, float]
    candidate_infeasible: int = 0
    diverged: int = 0
    epsilon: float = 0.0
    feas_pct: Optional[float] = None
    epochs_to_stop: Optional[int] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {
            "n_rollouts": self.n_rollouts,
            "safe_pct": self.safe_pct,
            "wrapped_safe_pct": self.wrapped_safe_pct,
            "interv_pct": self.interv_pct,
            "reason_pcts": dict(self.reason_pcts),
            "candidate_infeasible": self.candidate_infeasible,
            "diverged": self.diverged,
            "epsilon": self.epsilon,
            "feas_pct": self.feas_pct,
            "epochs_to_stop": self.epochs_to_stop,
        }
        data.update(self.extra)
        return data


def _open_loop_one(model: BenchmarkModel, ing: TerminalIngredients, policy, x: np.ndarray,
                   u_seq: np.ndarray, slack: float) -> bool:
    try:
        x_next = model.step(x, model.clamp_input(u_seq[0]))
        return is_feasible(model, ing, x_next, policy(x_next), slack=slack).feasible
    except SampcError as e:
        logger.debug(f"{model.name}: преемник недостижим: {e}")
        return False


def open_loop_eval(model: BenchmarkModel, ing: TerminalIngredients, policy,
                   test_states: np.ndarray, slack: float = DEFAULT_SLACK, progress: bool = False) -> float:
    """
    Доля (в %) тестовых состояний, в преемнике которых предложение политики допустимо

    Преемник получается применением первого предложенного входа
    (ограниченного физическими границами) к номинальной модели.

    Raises:
        EmptyTestSet: Нет тестовых состояний
    """
    X = np.asarray(test_states, dtype=np.float64).reshape(-1, model.n_x)
    M = X.shape[0]
    if M == 0:
        raise EmptyTestSet(f"{model.name}: пустой тестовый набор")

    feasible = 0
    stateful = hasattr(policy, "reset")
    if stateful:
        for x in tqdm(X, desc="Разомкнутый контур", disable=not progress):
            policy.reset()
            feasible += _open_loop_one(model, ing, policy, x, policy(x), slack)
    else:
        U = policy.batch(X)
        for x, u_seq in tqdm(zip(X, U), total=M, desc="Разомкнутый контур", disable=not progress):
            feasible += _open_loop_one(model, ing, policy, x, u_seq, slack)

    pct = 100.0 * feasible / M
    logger.info(f"{model.name}: допустимость в разомкнутом контуре {pct:.1f}% ({feasible}/{M})")
    return pct


def _rollout_pair(model: BenchmarkModel, ing: TerminalIngredients, policy, x: np.ndarray,
                  u_star: np.ndarray, steps: int, eps: float, seed: int,
                  index: int) -> Tuple[RolloutRecord, RolloutRecord]:
    """Наивный и обернутый прогоны из преемника строки датасета при одинаковом возмущении"""
    u_star = np.asarray(u_star, dtype=np.float64).reshape(model.N, model.n_u)
    _, _, states = evaluate_sequence(model, ing, x, u_star)
    if states is None:
        raise NonFiniteState(f"{model.name}: строка {index} не дает конечного прогона")
    candidate = shift_append(u_star, x, model, ing, states=states, source=CandidateSource.INITIAL)
    x_start = states[1]

    if hasattr(policy, "reset"):
        policy.reset()
    naive = closed_loop_run(model, ing, NaiveController(policy), x_start, steps, eps, seed, index)
    if hasattr(policy, "reset"):
        policy.reset()
    wrapped = closed_loop_run(model, ing, WrappedController(policy, model, ing, candidate),
                              x_start, steps, eps, seed, index)
    return naive, wrapped


def _rollout_chunk(model, ing, policy, rows: List[Tuple[int, np.ndarray, np.ndarray]],
                   steps: int, eps: float, seed: int) -> List[Tuple[RolloutRecord, RolloutRecord]]:
    return [_rollout_pair(model, ing, policy, x, u, steps, eps, seed, i) for i, x, u in rows]


def summarize(naive: List[RolloutRecord], wrapped: List[RolloutRecord], epsilon: float = 0.0) -> MetricsSummary:
    """
    Сводка по парам прогонов

    Safe % - доля безопасно завершенных наивных прогонов; Interv. % - доля
    обернутых прогонов, где кандидат применялся хотя бы раз; доли причин
    считаются только по таким прогонам.
    """
    M = len(naive)
    intervened = [r for r in wrapped if r.intervened]
    reason_pcts = {}
    for reason in Reason:
        hits = sum(any(reason in d.reasons for d in r.decisions) for r in intervened)
        reason_pcts[reason.value] = 100.0 * hits / len(intervened) if intervened else 0.0
    return MetricsSummary(
        n_rollouts=M,
        safe_pct=100.0 * sum(r.outcome == Outcome.SAFE_COMPLETE for r in naive) / M,
        wrapped_safe_pct=100.0 * sum(r.outcome == Outcome.SAFE_COMPLETE for r in wrapped) / M,
        interv_pct=100.0 * len(intervened) / M,
        reason_pcts=reason_pcts,
        candidate_infeasible=sum(r.candidate_infeasible for r in wrapped),
        diverged=sum(r.outcome == Outcome.DIVERGED for r in naive + wrapped),
        epsilon=float(epsilon),
    )


async def closed_loop_eval(model: BenchmarkModel, ing: TerminalIngredients, policy,
                           x_rows: np.ndarray, u_rows: np.ndarray, steps: int, eps: float,
                           seed: int, jobs: int = 1, progress: bool = False,
                           chunk: int = 4) -> Tuple[MetricsSummary, List[RolloutRecord], List[RolloutRecord]]:
    """
    Наивная и обернутая политика из одних и тех же M начальных строк

    Args:
        x_rows: Состояния строк (M, n_x)
        u_rows: Решения эксперта в этих состояниях (M, N * n_u) или (M, N, n_u)
        steps: Длина прогона
        eps: Граница возмущения входа
        seed: Зерно потоков возмущения
        jobs: Число процессов

    Returns:
        (сводка, наивные прогоны, обернутые прогоны) в порядке строк

    Raises:
        EmptyTestSet: M = 0
    """
    x_rows = np.asarray(x_rows, dtype=np.float64).reshape(-1, model.n_x)
    u_rows = np.asarray(u_rows, dtype=np.float64).reshape(x_rows.shape[0], model.N, model.n_u)
    M = x_rows.shape[0]
    if M == 0:
        raise EmptyTestSet(f"{model.name}: нет начальных состояний для замкнутого контура")

    rows = [(i, x_rows[i], u_rows[i]) for i in range(M)]
    batches = [rows[i:i + chunk] for i in range(0, M, chunk)]
    pairs: List[Tuple[RolloutRecord, RolloutRecord]] = []
    bar = tqdm(total=M, desc=f"Замкнутый контур {model.name}", disable=not progress)
    try:
        if jobs <= 1:
            for batch in batches:
                pairs.extend(_rollout_chunk(model, ing, policy, batch, steps, eps, seed))
                bar.update(len(batch))
        else:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [loop.run_in_executor(pool, _rollout_chunk, model, ing, policy, b, steps, eps, seed)
                           for b in batches]
                for result in await asyncio.gather(*futures):
                    pairs.extend(result)
                bar.update(M)
    finally:
        bar.close()

    naive = [p[0] for p in pairs]
    wrapped = [p[1] for p in pairs]
    summary = summarize(naive, wrapped, eps)
    logger.info(
        f"{model.name}: Safe {summary.safe_pct:.1f}%, обертка {summary.wrapped_safe_pct:.1f}%, "
        f"Interv. {summary.interv_pct:.1f}%, причины {summary.reason_pcts}, eps={eps}"
    )
    if summary.candidate_infeasible:
        logger.warning(f"{model.name}: кандидат недопустим в {summary.candidate_infeasible} прогонах")
    return summary, naive, wrapped
