import logging
from typing import Any, Mapping, Optional, Tuple

import numpy as np

from expert.ocp import Ocp, OcpSolution, SqpSolver
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients, terminal_control

logger = logging.getLogger(__name__)


class NmpcExpert:
    """Эксперт NMPC: решение задачи в текущем состоянии с теплым стартом"""

    def __init__(self, model: BenchmarkModel, ingredients: TerminalIngredients,
                 settings: Optional[Mapping[str, Any]] = None):
        self.model = model
        self.ingredients = ingredients
        self.solver = SqpSolver(settings)

    def solve(self, x0: np.ndarray, warm_start: Optional[np.ndarray] = None) -> OcpSolution:
        return self.solver.solve(Ocp(self.model, self.ingredients, x0), warm_start)

    def shifted_warm_start(self, prev: OcpSolution) -> np.ndarray:
        """
        Сдвиг предыдущего решения на шаг

        Последний номинальный вход соответствует терминальному регулятору
        в конце предсказанной траектории.
        """
        ing = self.ingredients
        x_N = prev.x_traj[-1]
        u_N, _ = terminal_control(x_N, ing)
        v_N = u_N - ing.u_ref - ing.K_delta @ (x_N - ing.x_ref)
        return np.vstack([prev.v_seq[1:], v_N])

    def action(self, x: np.ndarray, prev: Optional[OcpSolution] = None) -> Tuple[np.ndarray, OcpSolution]:
        """
        Первый вход решения: u = u_ref + K_delta (x - x_ref) + v*_0

        Args:
            x: Текущее состояние
            prev: Предыдущее решение для теплого старта

        Returns:
            (вход, решение); статус решения не скрывается
        """
        warm = None if prev is None or not np.all(np.isfinite(prev.x_traj)) else self.shifted_warm_start(prev)
        sol = self.solve(x, warm)
        ing = self.ingredients
        u = ing.u_ref + ing.K_delta @ (np.asarray(x, dtype=np.float64) - ing.x_ref) + sol.v_seq[0]
        return u, sol


def expert_action(expert: NmpcExpert, x: np.ndarray,
                  prev: Optional[OcpSolution] = None) -> Tuple[np.ndarray, OcpSolution]:
    return expert.action(x, prev)


class ExpertPolicy:
    """
    Эксперт в интерфейсе политики: x -> полная последовательность входов (N, n_u)

    Если решение не сошлось, а x совпадает с номинальным преемником
    предыдущего вызова, возвращается сдвинутое предыдущее решение с
    терминальным регулятором в конце.
    """

    def __init__(self, expert: NmpcExpert, warm_start: bool = True):
        self.expert = expert
        self.model = expert.model
        self.N = expert.model.N
        self.n_x = expert.model.n_x
        self.n_u = expert.model.n_u
        self.warm_start = warm_start
        self._prev: Optional[OcpSolution] = None
        self.fallbacks = 0

    def reset(self) -> None:
        self._prev = None

    def _shifted_previous(self) -> np.ndarray:
        prev = self._prev
        u_N, _ = terminal_control(prev.x_traj[-1], self.expert.ingredients)
        return np.vstack([prev.u_seq[1:], u_N])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        prev = self._prev
        warm = self.expert.shifted_warm_start(prev) if (self.warm_start and prev is not None and prev.converged) else None
        sol = self.expert.solve(x, warm)
        if sol.converged:
            self._prev = sol
            return sol.u_seq.copy()

        if prev is not None and prev.converged and np.allclose(x, prev.x_traj[1], atol=1e-12, rtol=0.0):
            self.fallbacks += 1
            logger.debug("Эксперт не сошелся, используем сдвинутое предыдущее решение")
            u_seq = self._shifted_previous()
            self._prev = None
            return u_seq

        self._prev = None
        if not np.all(np.isfinite(sol.u_seq)):
            return np.tile(self.expert.ingredients.u_ref, (self.N, 1))
        return sol.u_seq.copy()

    def batch(self, X: np.ndarray) -> np.ndarray:
        return np.stack([self(x) for x in np.asarray(X, dtype=np.float64)])
