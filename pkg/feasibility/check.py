"""
Проверка принадлежности последовательности входов множеству U^N(x) и ее стоимость
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import DimensionMismatch, NonFiniteState, SampcError
from expert.cost import stage_cost
from models.benchmarks import BenchmarkModel
from models.constraints import obstacle_clearance_sq
from terminal.ingredients import TerminalIngredients

logger = logging.getLogger(__name__)

DEFAULT_SLACK = 1e-9


@dataclass(frozen=True)
class FirstViolation:
    stage: int
    constraint: str
    margin: float


@dataclass(frozen=True)
class FeasibilityReport:
    state_ok: bool
    input_ok: bool
    obstacle_ok: bool
    terminal_ok: bool
    first_violation: Optional[FirstViolation] = None

    @property
    def feasible(self) -> bool:
        return self.state_ok and self.input_ok and self.obstacle_ok and self.terminal_ok


def _check_sequence(model: BenchmarkModel, u_seq: np.ndarray) -> np.ndarray:
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.shape != (model.N, model.n_u):
        raise DimensionMismatch(f"{model.name}: u_seq формы {u_seq.shape}, ожидалось ({model.N}, {model.n_u})")
    return u_seq


def rollout(model: BenchmarkModel, x: np.ndarray, u_seq: np.ndarray) -> np.ndarray:
    """
    Номинальный прогон phi(k; x; u), k = 0..N

    Векторизовано: x формы (..., n_x), u_seq формы (..., N, n_u).

    Raises:
        NonFiniteState: Прогон разошелся
    """
    x = np.asarray(x, dtype=np.float64)
    u_seq = np.asarray(u_seq, dtype=np.float64)
    N = u_seq.shape[-2]
    lead = np.broadcast_shapes(x.shape[:-1], u_seq.shape[:-2])
    states = np.empty(lead + (N + 1, model.n_x))
    states[..., 0, :] = x
    for k in range(N):
        states[..., k + 1, :] = model.step(states[..., k, :], u_seq[..., k, :])
    return states


def _partial_rollout(model: BenchmarkModel, x: np.ndarray, u_seq: np.ndarray) -> Tuple[np.ndarray, Optional[int]]:
    """Прогон до первого отказа модели; возвращает посещенные состояния и шаг отказа"""
    states = [np.asarray(x, dtype=np.float64)]
    for k in range(u_seq.shape[0]):
        try:
            states.append(model.step(states[-1], u_seq[k]))
        except SampcError as e:
            logger.debug(f"{model.name}: прогон прерван на шаге {k + 1}: {e}")
            return np.array(states), k + 1
    return np.array(states), None


def _first_bound_violation(values: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                           slack: float, label: str, stage_offset: int = 0) -> Optional[FirstViolation]:
    low = lower - slack - values
    high = values - upper - slack
    bad = (low > 0) | (high > 0)
    if not np.any(bad):
        return None
    stage, idx = np.argwhere(bad)[0]
    side, margin = ("lower", low[stage, idx]) if low[stage, idx] > 0 else ("upper", high[stage, idx])
    return FirstViolation(int(stage) + stage_offset, f"{label}[{idx}].{side}", float(margin))


def evaluate_sequence(model: BenchmarkModel, ing: TerminalIngredients, x: np.ndarray,
                      u_seq: np.ndarray, slack: float = DEFAULT_SLACK,
                      tightened: bool = True) -> Tuple[FeasibilityReport, float, Optional[np.ndarray]]:
    """
    Проверка допустимости и стоимость за один прогон

    Returns:
        (отчет, стоимость, состояния). При отказе модели стоимость inf,
        состояния None.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_x,):
        raise DimensionMismatch(f"{model.name}: состояние формы {x.shape}, ожидалось ({model.n_x},)")
    u_seq = _check_sequence(model, u_seq)
    N = model.N

    states, failed_at = _partial_rollout(model, x, u_seq)
    n_visited = states.shape[0]

    if tightened:
        x_lo, x_hi = ing.tightened_state_bounds(model.state_lower, model.state_upper, N)
        u_lo, u_hi = ing.tightened_input_bounds(model.input_lower, model.input_upper, N)
    else:
        x_lo, x_hi = np.tile(model.state_lower, (N + 1, 1)), np.tile(model.state_upper, (N + 1, 1))
        u_lo, u_hi = np.tile(model.input_lower, (N, 1)), np.tile(model.input_upper, (N, 1))

    candidates = []
    input_v = _first_bound_violation(u_seq, u_lo, u_hi, slack, "input")
    state_v = _first_bound_violation(states, x_lo[:n_visited], x_hi[:n_visited], slack, "state")
    if failed_at is not None:
        fail = FirstViolation(failed_at, "state.nonfinite", float("inf"))
        if state_v is None or state_v.stage > failed_at:
            state_v = fail

    obstacle_v = None
    if model.obstacles.n_obs:
        clearance = obstacle_clearance_sq(states, model)
        bad = clearance < -slack
        if np.any(bad):
            stage, idx = np.argwhere(bad)[0]
            obstacle_v = FirstViolation(int(stage), f"obstacle[{idx}]", float(-clearance[stage, idx]))

    terminal_v = None
    if failed_at is not None:
        terminal_v = FirstViolation(N, "terminal", float("inf"))
    else:
        level = float(ing.terminal_value(states[-1]))
        if level > ing.alpha + slack:
            terminal_v = FirstViolation(N, "terminal", level - ing.alpha)

    # на одном шаге: вход, состояние, препятствие, терминальное множество
    for order, v in enumerate((input_v, state_v, obstacle_v, terminal_v)):
        if v is not None:
            candidates.append((v.stage, order, v))
    first = min(candidates, key=lambda item: item[:2])[2] if candidates else None

    report = FeasibilityReport(
        state_ok=state_v is None,
        input_ok=input_v is None,
        obstacle_ok=obstacle_v is None,
        terminal_ok=terminal_v is None,
        first_violation=first,
    )
    if failed_at is not None:
        return report, float("inf"), None

    cost = float(np.sum(stage_cost(states[:-1], u_seq, model)) + ing.terminal_value(states[-1]))
    return report, cost, states


def is_feasible(model: BenchmarkModel, ing: TerminalIngredients, x: np.ndarray, u_seq: np.ndarray,
                slack: float = DEFAULT_SLACK, tightened: bool = True) -> FeasibilityReport:
    """
    Полный отчет о допустимости u_seq в состоянии x

    Проверяются границы входа на каждом шаге, границы состояния и
    препятствия в каждом посещенном состоянии (включая x) и принадлежность
    x_N терминальному множеству.

    Raises:
        DimensionMismatch: Неверные размерности
    """
    report, _, _ = evaluate_sequence(model, ing, x, u_seq, slack=slack, tightened=tightened)
    return report


def sequence_cost(model: BenchmarkModel, ing: TerminalIngredients, x: np.ndarray,
                  u_seq: np.ndarray) -> float:
    """
    V(x, u) = sum_k l(x_k, u_k) + V_f(x_N) вдоль номинального прогона

    Raises:
        NonFiniteState: Прогон разошелся
    """
    u_seq = _check_sequence(model, u_seq)
    states = rollout(model, x, u_seq)
    cost = float(np.sum(stage_cost(states[:-1], u_seq, model)) + ing.terminal_value(states[-1]))
    if not np.isfinite(cost):
        raise NonFiniteState(f"{model.name}: неконечная стоимость последовательности")
    return cost
