"""
Замкнутый контур с ограниченным возмущением входа
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Protocol, Tuple

import numpy as np

from errors import SampcError
from expert.controller import ExpertPolicy
from feasibility.check import DEFAULT_SLACK
from models.benchmarks import BenchmarkModel
from models.constraints import constraint_violations
from terminal.ingredients import TerminalIngredients
from utils.seeding import Stream, rng_for
from wrapper.safe import Candidate, SafeController, SafetyDecision

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    SAFE_COMPLETE = "SafeComplete"
    VIOLATED = "Violated"
    DIVERGED = "Diverged"


class Controller(Protocol):
    stops_on_violation: bool

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[SafetyDecision]]:
        ...


class NaiveController:
    """Первая строка предложения политики применяется напрямую"""

    stops_on_violation = True

    def __init__(self, policy):
        self.policy = policy

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[SafetyDecision]]:
        return np.asarray(self.policy(x))[0], None


class WrappedController:
    """Политика под защитной оберткой; прогон не прерывается при нарушении"""

    stops_on_violation = False

    def __init__(self, policy, model: BenchmarkModel, ing: TerminalIngredients,
                 candidate: Candidate, strict: bool = False):
        self.safe = SafeController(policy, model, ing, candidate, strict=strict)

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[SafetyDecision]]:
        return self.safe.step(x)


class ExpertController:
    stops_on_violation = True

    def __init__(self, expert_policy: ExpertPolicy):
        self.expert_policy = expert_policy
        expert_policy.reset()

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[SafetyDecision]]:
        return self.expert_policy(x)[0], None


@dataclass
class RolloutRecord:
    states: np.ndarray
    inputs: np.ndarray
    decisions: List[SafetyDecision]
    violation_flags: np.ndarray
    disturbances: np.ndarray
    outcome: Outcome
    violated_step: Optional[int] = None
    violations: List[str] = field(default_factory=list)

    @property
    def intervened(self) -> bool:
        return any(d.reasons for d in self.decisions)

    @property
    def candidate_infeasible(self) -> bool:
        return any(d.candidate_infeasible for d in self.decisions)

    def trace(self) -> np.ndarray:
        """Строки [x_t, u_t, d_t, флаг]; последняя строка без входа дополняется NaN"""
        rows = self.states.shape[0]
        pad = np.full((rows - self.inputs.shape[0], 2 * self.inputs.shape[1]), np.nan)
        u_d = np.vstack([np.hstack([self.inputs, self.disturbances]), pad])
        return np.hstack([self.states, u_d, self.violation_flags[:rows, None].astype(np.float64)])


def closed_loop_run(model: BenchmarkModel, ing: TerminalIngredients, controller: Controller,
                    x0: np.ndarray, steps: int, eps: float, seed: int, index: int = 0) -> RolloutRecord:
    """
    Прогон замкнутого контура

    На шаге t применяется clip(u_t + d_t) с d_t ~ U[-eps, eps]^{n_u};
    ограничения проверяются по реализованным состояниям и входам с
    допуском 1e-9 относительно исходных (не суженных) границ.

    Args:
        model: Бенчмарк
        ing: Терминальные ингредиенты (только для подписи контроллеров)
        controller: Контроллер
        x0: Начальное состояние
        steps: Число шагов
        eps: Граница возмущения
        seed: Корневое зерно
        index: Номер прогона (ключ потока возмущений)
    """
    rng = rng_for(seed, Stream.DISTURBANCE, index)
    x = np.asarray(x0, dtype=np.float64)
    states, inputs, dists, flags = [x], [], [], []
    decisions: List[SafetyDecision] = []
    messages: List[str] = []
    outcome, violated_step = Outcome.SAFE_COMPLETE, None

    for t in range(steps):
        d = rng.uniform(-eps, eps, size=model.n_u)
        try:
            u, decision = controller(x)
            u_applied = model.clamp_input(np.asarray(u, dtype=np.float64) + d)
            violations = constraint_violations(x, u_applied, model, slack=DEFAULT_SLACK)
            x_next = model.step(x, u_applied)
        except SampcError as e:
            logger.debug(f"{model.name}: прогон {index} разошелся на шаге {t}: {e}")
            flags.append(True)
            outcome, violated_step = Outcome.DIVERGED, t
            messages.append(f"{t}: {e}")
            break

        if decision is not None:
            decisions.append(decision)
        inputs.append(u_applied)
        dists.append(d)
        flags.append(bool(violations))
        if violations:
            messages.extend(f"{t}: {v}" for v in violations)
            if violated_step is None:
                outcome, violated_step = Outcome.VIOLATED, t
            if controller.stops_on_violation:
                break
        x = x_next
        states.append(x)
    else:
        final = constraint_violations(x, None, model, slack=DEFAULT_SLACK)
        flags.append(bool(final))
        if final:
            messages.extend(f"{steps}: {v}" for v in final)
            if violated_step is None:
                outcome, violated_step = Outcome.VIOLATED, steps

    return RolloutRecord(
        states=np.array(states),
        inputs=np.array(inputs).reshape(-1, model.n_u),
        decisions=decisions,
        violation_flags=np.array(flags, dtype=bool),
        disturbances=np.array(dists).reshape(-1, model.n_u),
        outcome=outcome,
        violated_step=violated_step,
        violations=messages,
    )
