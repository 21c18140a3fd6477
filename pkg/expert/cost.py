import logging
from typing import Tuple

import numpy as np

from errors import DimensionMismatch
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients

logger = logging.getLogger(__name__)


def stage_cost(x: np.ndarray, u: np.ndarray, model: BenchmarkModel) -> np.ndarray:
    """
    Квадратичная стоимость шага (x - x_ref)^T Q (x - x_ref) + (u - u_ref)^T R (u - u_ref)

    Дрейфовые координаты модели в стоимость не входят. Векторизовано
    по ведущим осям.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape[-1] != model.n_x or u.shape[-1] != model.n_u:
        raise DimensionMismatch(
            f"{model.name}: ожидались x[{model.n_x}], u[{model.n_u}], получено {x.shape}, {u.shape}"
        )
    e = model.state_error(x)
    du = u - model.u_ref
    return np.einsum("...i,ij,...j->...", e, model.Q, e) + np.einsum("...i,ij,...j->...", du, model.R, du)


def recompose(model: BenchmarkModel, ing: TerminalIngredients, x0: np.ndarray,
              v_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Прогон с параметризацией трубки u_k = u_ref + K_delta (x_k - x_ref) + v_k

    Returns:
        (states (N+1, n_x), inputs (N, n_u))
    """
    x0 = np.asarray(x0, dtype=np.float64)
    v_seq = np.asarray(v_seq, dtype=np.float64)
    N = v_seq.shape[0]
    states = np.empty((N + 1, model.n_x))
    inputs = np.empty((N, model.n_u))
    states[0] = x0
    for k in range(N):
        inputs[k] = ing.u_ref + ing.K_delta @ (states[k] - ing.x_ref) + v_seq[k]
        states[k + 1] = model.step(states[k], inputs[k])
    return states, inputs


def trajectory_cost(model: BenchmarkModel, ing: TerminalIngredients,
                    states: np.ndarray, inputs: np.ndarray) -> float:
    """Сумма стоимостей шагов плюс V_f(x_N) по готовой траектории"""
    return float(np.sum(stage_cost(states[:-1], inputs, model)) + ing.terminal_value(states[-1]))


def total_cost(x0: np.ndarray, v_seq: np.ndarray, model: BenchmarkModel,
               ing: TerminalIngredients) -> float:
    """
    Стоимость задачи оптимального управления для номинальной последовательности v

    Raises:
        DimensionMismatch: v_seq не из N строк
        NonFiniteState: Прогон разошелся
    """
    v_seq = np.asarray(v_seq, dtype=np.float64)
    if v_seq.shape != (model.N, model.n_u):
        raise DimensionMismatch(f"{model.name}: v_seq формы {v_seq.shape}, ожидалось ({model.N}, {model.n_u})")
    states, inputs = recompose(model, ing, x0, v_seq)
    return trajectory_cost(model, ing, states, inputs)
