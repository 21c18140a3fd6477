"""
Защитная обертка политики: предложение сети принимается, только если оно
допустимо и дешевле хранимого безопасного кандидата; кандидат обновляется
сдвигом с терминальным регулятором в конце.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, FrozenSet, List, Optional, Tuple

import numpy as np

from errors import CandidateInfeasible, SampcError
from expert.cost import stage_cost
from feasibility.check import DEFAULT_SLACK, FeasibilityReport, evaluate_sequence, rollout, sequence_cost
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients, terminal_control

logger = logging.getLogger(__name__)

PolicyFn = Callable[[np.ndarray], np.ndarray]


class CandidateSource(str, Enum):
    INITIAL = "Initial"
    NN_ACCEPTED = "NnAccepted"
    SHIFTED = "Shifted"


class Choice(str, Enum):
    PROPOSAL = "Proposal"
    CANDIDATE = "Candidate"


class Reason(str, Enum):
    STATE = "State"
    TERMINAL = "Terminal"
    COST = "Cost"


@dataclass(frozen=True)
class Candidate:
    u_seq: np.ndarray
    source: CandidateSource
    cost_at_creation: float


@dataclass(frozen=True)
class SafetyDecision:
    proposal_feasible: bool
    chosen: Choice
    reasons: FrozenSet[Reason]
    proposal_cost: Optional[float]
    candidate_cost: float
    candidate_infeasible: bool = False

    def to_dict(self) -> dict:
        return {
            "proposal_feasible": self.proposal_feasible,
            "chosen": self.chosen.value,
            "reasons": sorted(r.value for r in self.reasons),
            "proposal_cost": self.proposal_cost,
            "candidate_cost": self.candidate_cost,
            "candidate_infeasible": self.candidate_infeasible,
        }


def initial_candidate(u_seq: np.ndarray, x: np.ndarray, model: BenchmarkModel,
                      ing: TerminalIngredients) -> Candidate:
    """Начальный кандидат (обычно решение эксперта из датасета)"""
    u_seq = np.array(u_seq, dtype=np.float64)
    return Candidate(u_seq, CandidateSource.INITIAL, sequence_cost(model, ing, x, u_seq))


def shift_append(u_applied: np.ndarray, x: np.ndarray, model: BenchmarkModel,
                 ing: TerminalIngredients, states: Optional[np.ndarray] = None,
                 source: CandidateSource = CandidateSource.SHIFTED) -> Candidate:
    """
    Сдвиг последовательности: {u_1, ..., u_{N-1}, K_f(phi(N; x; u))}

    Args:
        u_applied: Выбранная последовательность (N, n_u)
        x: Состояние, в котором она выбрана
        states: Готовый номинальный прогон из x (если уже посчитан)

    Returns:
        Кандидат; cost_at_creation - его стоимость в номинальном преемнике

    Raises:
        NonFiniteState: Прогон разошелся
    """
    u_applied = np.asarray(u_applied, dtype=np.float64)
    if states is None:
        states = rollout(model, x, u_applied)
    x_N = states[-1]
    u_N, _ = terminal_control(x_N, ing)
    u_next = np.vstack([u_applied[1:], u_N])

    # стоимость в преемнике: те же состояния плюс один шаг из x_N
    try:
        x_end = model.step(x_N, u_N)
        cost = float(np.sum(stage_cost(states[1:], u_next, model)) + ing.terminal_value(x_end))
    except SampcError:
        cost = float("inf")
    return Candidate(u_next, source, cost)


def _reasons(report: FeasibilityReport, proposal_cost: float, candidate_cost: float) -> FrozenSet[Reason]:
    reasons = set()
    if not (report.state_ok and report.input_ok and report.obstacle_ok):
        reasons.add(Reason.STATE)
    if not report.terminal_ok:
        reasons.add(Reason.TERMINAL)
    if report.feasible and not proposal_cost < candidate_cost:
        reasons.add(Reason.COST)
    return frozenset(reasons)


def safe_step(x: np.ndarray, policy: PolicyFn, cand: Candidate, model: BenchmarkModel,
              ing: TerminalIngredients, slack: float = DEFAULT_SLACK,
              proposal: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Candidate, SafetyDecision]:
    """
    Один шаг обертки

    Args:
        x: Текущее состояние
        policy: Политика x -> (N, n_u)
        cand: Хранимый кандидат
        proposal: Готовое предложение вместо вызова policy

    Returns:
        (первый вход, следующий кандидат, решение)
    """
    x = np.asarray(x, dtype=np.float64)
    u_hat = np.asarray(policy(x) if proposal is None else proposal, dtype=np.float64)

    cand_report, cand_cost, cand_states = evaluate_sequence(model, ing, x, cand.u_seq, slack)
    prop_report, prop_cost, prop_states = evaluate_sequence(model, ing, x, u_hat, slack)

    reasons = _reasons(prop_report, prop_cost, cand_cost)
    if reasons:
        chosen, u_seq, states, source = Choice.CANDIDATE, cand.u_seq, cand_states, CandidateSource.SHIFTED
    else:
        chosen, u_seq, states, source = Choice.PROPOSAL, u_hat, prop_states, CandidateSource.NN_ACCEPTED

    decision = SafetyDecision(
        proposal_feasible=prop_report.feasible,
        chosen=chosen,
        reasons=reasons,
        proposal_cost=prop_cost if prop_report.feasible else None,
        candidate_cost=cand_cost,
        candidate_infeasible=not cand_report.feasible,
    )
    if decision.candidate_infeasible:
        logger.debug(f"Кандидат недопустим в текущем состоянии: {cand_report.first_violation}")

    next_cand = shift_append(u_seq, x, model, ing, states=states, source=source)
    return u_seq[0].copy(), next_cand, decision


class SafeController:
    """
    Обертка с состоянием: хранит кандидата между шагами и журнал решений

    Args:
        policy: Политика x -> (N, n_u)
        model: Бенчмарк
        ing: Терминальные ингредиенты
        candidate: Начальный безопасный кандидат
        strict: Бросать CandidateInfeasible вместо предупреждения
    """

    def __init__(self, policy: PolicyFn, model: BenchmarkModel, ing: TerminalIngredients,
                 candidate: Candidate, strict: bool = False, slack: float = DEFAULT_SLACK):
        self.policy = policy
        self.model = model
        self.ing = ing
        self.candidate = candidate
        self.strict = strict
        self.slack = slack
        self.decisions: List[SafetyDecision] = []

    def reset(self, candidate: Candidate) -> None:
        self.candidate = candidate
        self.decisions = []

    def step(self, x: np.ndarray) -> Tuple[np.ndarray, SafetyDecision]:
        u0, next_cand, decision = safe_step(x, self.policy, self.candidate, self.model, self.ing, self.slack)
        if decision.candidate_infeasible:
            if self.strict:
                raise CandidateInfeasible(f"{self.model.name}: кандидат недопустим на шаге {len(self.decisions)}")
            logger.warning(f"{self.model.name}: кандидат недопустим на шаге {len(self.decisions)}, применяется с флагом")
        self.candidate = next_cand
        self.decisions.append(decision)
        return u0, decision

    __call__ = step
