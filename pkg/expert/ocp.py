"""
Задача оптимального управления с параметризацией трубки и ее решатель

Одиночная стрельба: переменные - номинальные входы v_0..v_{N-1}, входы
u_k = u_ref + K_delta (x_k - x_ref) + v_k. Гессиан Гаусса-Ньютона,
подзадача QP решается OSQP; ограничения состояния, препятствий,
терминального множества и фактических входов учитываются точным
l1-штрафом с возрастающим весом.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import osqp
from scipy import sparse

from config import DEFAULTS
from errors import DimensionMismatch, NonFiniteState, SampcError
from expert.cost import recompose, trajectory_cost
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients
from terminal.riccati import step_jacobians

logger = logging.getLogger(__name__)

# при исчерпании итераций OSQP решение все равно используется: точность шага
# контролирует внешний критерий |d| <= kkt_tol
_ACCEPTED_QP_STATUS = ("solved", "solved inaccurate", "maximum iterations reached")


class SolveStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True, eq=False)
class Ocp:
    """Экземпляр задачи: модель, ингредиенты, начальное состояние и ужесточенные границы"""

    model: BenchmarkModel
    ingredients: TerminalIngredients
    x0: np.ndarray
    horizon: Optional[int] = None

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=np.float64)
        if x0.shape != (self.model.n_x,):
            raise DimensionMismatch(f"{self.model.name}: x0 формы {x0.shape}, ожидалось ({self.model.n_x},)")
        if not np.all(np.isfinite(x0)):
            raise NonFiniteState(f"{self.model.name}: неконечное начальное состояние")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        horizon = self.model.N if self.horizon is None else int(self.horizon)
        if horizon != self.model.N:
            raise DimensionMismatch(f"{self.model.name}: горизонт {horizon} != N={self.model.N}")
        object.__setattr__(self, "horizon", horizon)

    @property
    def N(self) -> int:
        return self.horizon

    def state_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.ingredients.tightened_state_bounds(self.model.state_lower, self.model.state_upper, self.N)

    def input_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.ingredients.tightened_input_bounds(self.model.input_lower, self.model.input_upper, self.N)

    def v_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Ящик для v_k: ужесточенное множество входов, сдвинутое на u_ref"""
        lo, hi = self.input_bounds()
        return lo - self.ingredients.u_ref, hi - self.ingredients.u_ref


@dataclass
class OcpSolution:
    v_seq: np.ndarray
    x_traj: np.ndarray
    u_seq: np.ndarray
    cost: float
    kkt_residual: float
    status: SolveStatus
    iterations: int
    max_violation: float = 0.0
    penalty: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


class _ConstraintSet:
    """Ограничения c(v) <= 0 в сырых единицах (с отступом backoff) и их масштабы"""

    def __init__(self, ocp: Ocp, backoff: float):
        self.ocp = ocp
        self.model = ocp.model
        self.ing = ocp.ingredients
        self.backoff = backoff
        x_lo, x_hi = ocp.state_bounds()
        u_lo, u_hi = ocp.input_bounds()
        # шаг 0 не зависит от v
        self.x_lo, self.x_hi = x_lo[1:], x_hi[1:]
        self.u_lo, self.u_hi = u_lo, u_hi
        self.mx_lo, self.mx_hi = np.isfinite(self.x_lo), np.isfinite(self.x_hi)
        self.mu_lo, self.mu_hi = np.isfinite(self.u_lo), np.isfinite(self.u_hi)
        obs = self.model.obstacles
        self.n_obs = obs.n_obs
        n_bounds = int(self.mx_lo.sum() + self.mx_hi.sum() + self.mu_lo.sum() + self.mu_hi.sum())
        n_obs_rows = self.n_obs * ocp.N
        # при alpha = inf терминальное ограничение отсутствует
        self.has_terminal = bool(np.isfinite(self.ing.alpha))
        self.scale = np.concatenate([
            np.ones(n_bounds),
            np.full(n_obs_rows, 1.0 / obs.r_safe ** 2),
            [1.0 / max(self.ing.alpha, 1e-12)] if self.has_terminal else [],
        ])

    @property
    def size(self) -> int:
        return self.scale.shape[0]

    def values(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        X = xs[1:]
        parts = [
            (self.x_lo - X)[self.mx_lo],
            (X - self.x_hi)[self.mx_hi],
            (self.u_lo - us)[self.mu_lo],
            (us - self.u_hi)[self.mu_hi],
        ]
        if self.n_obs:
            ix, iy = self.model.position_states
            centers = self.model.obstacles.centers
            dx = X[:, ix, None] - centers[:, 0]
            dy = X[:, iy, None] - centers[:, 1]
            parts.append((self.model.obstacles.r_safe ** 2 - dx * dx - dy * dy).reshape(-1))
        if self.has_terminal:
            parts.append([self.ing.terminal_value(xs[-1]) - self.ing.alpha])
        return np.concatenate(parts) + self.backoff

    def jacobian(self, xs: np.ndarray, Sx: np.ndarray, Su: np.ndarray) -> np.ndarray:
        S = Sx[1:]
        parts = [-S[self.mx_lo], S[self.mx_hi], -Su[self.mu_lo], Su[self.mu_hi]]
        if self.n_obs:
            ix, iy = self.model.position_states
            X = xs[1:]
            centers = self.model.obstacles.centers
            dx = X[:, ix, None] - centers[:, 0]
            dy = X[:, iy, None] - centers[:, 1]
            grad = -2.0 * (dx[..., None] * S[:, ix, None, :] + dy[..., None] * S[:, iy, None, :])
            parts.append(grad.reshape(-1, S.shape[-1]))
        if self.has_terminal:
            e_N = xs[-1] - self.ing.x_ref
            parts.append((2.0 * e_N @ self.ing.P @ Sx[-1])[None, :])
        return np.vstack(parts)


class SqpSolver:
    """
    SQP Гаусса-Ньютона для одиночной стрельбы

    Каждый экземпляр имеет собственное рабочее состояние; для параллельной
    генерации данных в каждом воркере создается свой решатель.
    """

    def __init__(self, settings: Optional[Mapping[str, Any]] = None):
        self.settings: Dict[str, Any] = dict(DEFAULTS["solver"], **(settings or {}))

    def _simulate(self, ocp: Ocp, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return recompose(ocp.model, ocp.ingredients, ocp.x0, v)

    def _sensitivities(self, ocp: Ocp, xs: np.ndarray, us: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        model, ing = ocp.model, ocp.ingredients
        N, n_x, n_u = ocp.N, model.n_x, model.n_u
        n_v = N * n_u
        A, B = step_jacobians(model, xs[:-1], us, float(self.settings["fd_step"]))
        Sx = np.zeros((N + 1, n_x, n_v))
        Su = np.zeros((N, n_u, n_v))
        eye = np.eye(n_u)
        for k in range(N):
            Su[k] = ing.K_delta @ Sx[k]
            Su[k][:, k * n_u:(k + 1) * n_u] += eye
            Sx[k + 1] = A[k] @ Sx[k] + B[k] @ Su[k]
        return Sx, Su

    def _quadratic_model(self, ocp: Ocp, xs: np.ndarray, us: np.ndarray,
                         Sx: np.ndarray, Su: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        model, ing = ocp.model, ocp.ingredients
        mask = model.tracked_mask
        e = model.state_error(xs[:-1])
        du = us - model.u_ref
        Se = Sx[:-1] * mask[None, :, None]
        QSe = np.matmul(model.Q, Se)
        RSu = np.matmul(model.R, Su)
        PSx = ing.P @ Sx[-1]
        e_N = xs[-1] - ing.x_ref

        g = 2.0 * (np.einsum("kiv,ki->v", QSe, e) + np.einsum("kiv,ki->v", RSu, du) + PSx.T @ e_N)
        H = 2.0 * (np.einsum("kiv,kiw->vw", Se, QSe) + np.einsum("kiv,kiw->vw", Su, RSu) + Sx[-1].T @ PSx)
        H = 0.5 * (H + H.T) + float(self.settings["regularization"]) * np.eye(H.shape[0])
        return H, g

    def _solve_qp(self, H: np.ndarray, g: np.ndarray, G: np.ndarray, c: np.ndarray, mu: float,
                  lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
        n, m = H.shape[0], G.shape[0]
        boxed = np.flatnonzero(np.isfinite(lo) | np.isfinite(hi))
        if m == 0 and boxed.size == 0:
            return np.linalg.solve(H, -g)

        box = sparse.csc_matrix((np.ones(boxed.size), (np.arange(boxed.size), boxed)), shape=(boxed.size, n))
        if m == 0:
            P = sparse.triu(sparse.csc_matrix(H), format="csc")
            q = g
            A = box
            l, u = lo[boxed], hi[boxed]
        else:
            # переменные [d, s]: c + G d <= s, s >= 0, штраф mu * sum(s)
            eye_m = sparse.identity(m, format="csc")
            P = sparse.triu(sparse.block_diag([sparse.csc_matrix(H), sparse.csc_matrix((m, m))]), format="csc")
            q = np.concatenate([g, np.full(m, mu)])
            blocks = [
                sparse.hstack([sparse.csc_matrix(G), -eye_m]),
                sparse.hstack([sparse.csc_matrix((m, n)), eye_m]),
            ]
            if boxed.size:
                blocks.append(sparse.hstack([box, sparse.csc_matrix((boxed.size, m))]))
            A = sparse.vstack(blocks, format="csc")
            l = np.concatenate([np.full(m, -np.inf), np.zeros(m), lo[boxed]])
            u = np.concatenate([-c, np.full(m, np.inf), hi[boxed]])

        solver = osqp.OSQP()
        solver.setup(
            P=P, q=q, A=A, l=l, u=u,
            eps_abs=float(self.settings["osqp_eps"]),
            eps_rel=float(self.settings["osqp_eps"]),
            max_iter=int(self.settings["osqp_max_iter"]),
            polish=True,
            verbose=False,
        )
        result = solver.solve()
        status = result.info.status
        if status not in _ACCEPTED_QP_STATUS or result.x is None:
            logger.debug(f"OSQP: статус {status}")
            return None
        d = np.asarray(result.x[:n], dtype=np.float64)
        if not np.all(np.isfinite(d)):
            return None
        # шаг внутри ящика с точностью до допуска OSQP
        return np.clip(d, lo, hi)

    def solve(self, ocp: Ocp, warm_start: Optional[np.ndarray] = None) -> OcpSolution:
        """
        Решить задачу

        Args:
            ocp: Экземпляр задачи
            warm_start: Начальное приближение v (N, n_u); без него v = 0

        Returns:
            Решение со статусом Converged, MaxIter или Infeasible
        """
        s = self.settings
        model = ocp.model
        N, n_u = ocp.N, model.n_u
        v_lo, v_hi = (b.reshape(-1) for b in ocp.v_bounds())

        if warm_start is None:
            v = np.zeros(N * n_u)
        else:
            warm_start = np.asarray(warm_start, dtype=np.float64)
            if warm_start.shape != (N, n_u):
                raise DimensionMismatch(f"{model.name}: warm_start формы {warm_start.shape}, ожидалось ({N}, {n_u})")
            v = warm_start.reshape(-1).copy()
        v = np.clip(v, v_lo, v_hi)

        constraints = _ConstraintSet(ocp, float(s["backoff"]))
        schedule = [float(mu) for mu in s["penalty_schedule"]]
        kkt_tol, viol_tol = float(s["kkt_tol"]), float(s["viol_tol"])

        def evaluate(v_flat: np.ndarray):
            xs, us = self._simulate(ocp, v_flat.reshape(N, n_u))
            J = trajectory_cost(model, ocp.ingredients, xs, us)
            c_raw = constraints.values(xs, us)
            if not np.isfinite(J) or not np.all(np.isfinite(c_raw)):
                raise NonFiniteState(f"{model.name}: неконечная стоимость или ограничения")
            return xs, us, J, c_raw

        try:
            xs, us, J, c_raw = evaluate(v)
        except SampcError as e:
            logger.debug(f"{model.name}: начальное приближение неработоспособно: {e}")
            return OcpSolution(
                v_seq=v.reshape(N, n_u), x_traj=np.full((N + 1, model.n_x), np.nan),
                u_seq=np.full((N, n_u), np.nan), cost=float("inf"), kkt_residual=float("inf"),
                status=SolveStatus.INFEASIBLE, iterations=0, max_violation=float("inf"),
            )

        mu_idx = 0
        steps = 0
        kkt = float("inf")
        status = SolveStatus.MAX_ITER
        history = []

        for _ in range(int(s["max_iter"])):
            mu = schedule[mu_idx]
            viol = max(0.0, float(np.max(c_raw, initial=0.0)))
            Sx, Su = self._sensitivities(ocp, xs, us)
            H, g = self._quadratic_model(ocp, xs, us, Sx, Su)
            c_s = constraints.scale * c_raw
            G_s = constraints.scale[:, None] * constraints.jacobian(xs, Sx, Su)

            d = self._solve_qp(H, g, G_s, c_s, mu, v_lo - v, v_hi - v)
            if d is None:
                status = SolveStatus.INFEASIBLE if viol > viol_tol else SolveStatus.MAX_ITER
                logger.debug(f"{model.name}: подзадача QP не решена, остановка")
                break

            kkt = float(np.max(np.abs(d), initial=0.0))
            history.append((J, viol, kkt, mu))
            logger.debug(f"{model.name}: SQP шаг {steps}: J={J:.6g}, нарушение={viol:.2e}, |d|={kkt:.2e}, mu={mu:g}")

            if kkt <= kkt_tol:
                if viol <= viol_tol:
                    status = SolveStatus.CONVERGED
                    break
                if mu_idx + 1 < len(schedule):
                    mu_idx += 1
                    continue
                status = SolveStatus.INFEASIBLE
                break

            penalty_now = float(np.sum(np.maximum(c_s, 0.0)))
            merit = J + mu * penalty_now
            predicted = -(g @ d + 0.5 * d @ H @ d) + mu * (
                penalty_now - float(np.sum(np.maximum(c_s + G_s @ d, 0.0)))
            )
            predicted = max(predicted, 0.0)

            t = 1.0
            accepted = None
            for _ in range(int(s["max_backtracks"])):
                v_try = np.clip(v + t * d, v_lo, v_hi)
                try:
                    trial = evaluate(v_try)
                except SampcError:
                    t *= 0.5
                    continue
                merit_try = trial[2] + mu * float(np.sum(np.maximum(constraints.scale * trial[3], 0.0)))
                if merit_try <= merit - float(s["armijo"]) * t * predicted:
                    accepted = (v_try, trial)
                    break
                t *= 0.5

            if accepted is None:
                if mu_idx + 1 < len(schedule) and viol > viol_tol:
                    mu_idx += 1
                    continue
                status = SolveStatus.INFEASIBLE if viol > viol_tol else SolveStatus.MAX_ITER
                logger.debug(f"{model.name}: линейный поиск не нашел шаг")
                break

            v, (xs, us, J, c_raw) = accepted
            steps += 1

        max_violation = max(0.0, float(np.max(c_raw, initial=0.0)))
        solution = OcpSolution(
            v_seq=v.reshape(N, n_u).copy(),
            x_traj=xs,
            u_seq=us,
            cost=float(J),
            kkt_residual=kkt,
            status=status,
            iterations=steps,
            max_violation=max_violation,
            penalty=schedule[mu_idx],
            history=history,
        )
        logger.debug(
            f"{model.name}: SQP завершен со статусом {status.value} за {steps} шагов "
            f"(KKT {kkt:.2e}, нарушение {max_violation:.2e})"
        )
        return solution


def solve(ocp: Ocp, warm_start: Optional[np.ndarray] = None,
          settings: Optional[Mapping[str, Any]] = None) -> OcpSolution:
    return SqpSolver(settings).solve(ocp, warm_start)
