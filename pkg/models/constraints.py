import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from errors import DimensionMismatch
from models.benchmarks import BenchmarkModel

logger = logging.getLogger(__name__)

STATE = "state"
INPUT = "input"
OBSTACLE = "obstacle"


@dataclass(frozen=True)
class Violation:
    """
    Нарушенное ограничение

    margin > 0 - на сколько нарушено (для препятствия r_safe^2 - d^2).
    side: 'lower', 'upper' или 'clearance'.
    """

    kind: str
    index: int
    side: str
    margin: float


def obstacle_clearance_sq(x: np.ndarray, model: BenchmarkModel) -> np.ndarray:
    """d_i^2 - r_safe^2 для каждого препятствия (векторизовано по ведущим осям x)"""
    obs = model.obstacles
    if obs.n_obs == 0:
        return np.zeros(np.shape(x)[:-1] + (0,))
    ix, iy = model.position_states
    x = np.asarray(x, dtype=np.float64)
    dx = x[..., ix, None] - obs.centers[:, 0]
    dy = x[..., iy, None] - obs.centers[:, 1]
    return dx * dx + dy * dy - obs.r_safe ** 2


def _check_dims(x: np.ndarray, u: Optional[np.ndarray], model: BenchmarkModel) -> None:
    if x.shape != (model.n_x,):
        raise DimensionMismatch(f"{model.name}: состояние формы {x.shape}, ожидалось ({model.n_x},)")
    if u is not None and u.shape != (model.n_u,):
        raise DimensionMismatch(f"{model.name}: вход формы {u.shape}, ожидалось ({model.n_u},)")


def constraint_violations(x: np.ndarray, u: Optional[np.ndarray], model: BenchmarkModel,
                          state_lower: np.ndarray = None, state_upper: np.ndarray = None,
                          input_lower: np.ndarray = None, input_upper: np.ndarray = None,
                          slack: float = 0.0) -> List[Violation]:
    """
    Все нарушенные ограничения пары (x, u)

    Args:
        x: Состояние
        u: Вход (None - проверяются только состояние и препятствия)
        model: Бенчмарк
        state_lower, state_upper, input_lower, input_upper: Границы
            вместо границ модели (например, ужесточенные)
        slack: Допуск на все неравенства

    Returns:
        Список нарушений; пустой, если (x, u) допустима
    """
    x = np.asarray(x, dtype=np.float64)
    u = None if u is None else np.asarray(u, dtype=np.float64)
    _check_dims(x, u, model)

    x_lo = model.state_lower if state_lower is None else state_lower
    x_hi = model.state_upper if state_upper is None else state_upper
    violations: List[Violation] = []

    for i in range(model.n_x):
        if x[i] < x_lo[i] - slack:
            violations.append(Violation(STATE, i, "lower", float(x_lo[i] - x[i])))
        if x[i] > x_hi[i] + slack:
            violations.append(Violation(STATE, i, "upper", float(x[i] - x_hi[i])))

    if u is not None:
        u_lo = model.input_lower if input_lower is None else input_lower
        u_hi = model.input_upper if input_upper is None else input_upper
        for j in range(model.n_u):
            if u[j] < u_lo[j] - slack:
                violations.append(Violation(INPUT, j, "lower", float(u_lo[j] - u[j])))
            if u[j] > u_hi[j] + slack:
                violations.append(Violation(INPUT, j, "upper", float(u[j] - u_hi[j])))

    for k, clearance in enumerate(obstacle_clearance_sq(x, model)):
        if clearance < -slack:
            violations.append(Violation(OBSTACLE, k, "clearance", float(-clearance)))

    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        violations.append(Violation(STATE, bad, "nonfinite", float("inf")))

    return violations
