"""
Синтез терминальных ингредиентов через LQR и выбор уровня alpha

Последовательность:
1. линеаризация в (x_ref, u_ref), для дрейфовых координат - в приведенных
   координатах;
2. DARE с весами Q, R, умноженными на cost_inflation;
3. бисекция alpha по граничным точкам эллипсоида (ограничения состояния,
   ужесточенные ограничения входа, препятствия);
4. геометрическое уменьшение alpha до выполнения выборочной инвариантности
   и убывания функции Ляпунова.
"""
import logging
from typing import Any, Dict, Mapping, Optional

import numpy as np
from scipy.stats import norm, qmc

from config import DEFAULTS
from errors import EmptyTerminalSet, NoConvergence, SampcError
from models.benchmarks import BenchmarkModel
from terminal.ingredients import TerminalIngredients
from terminal.riccati import linearize, solve_dare, spectral_radius

logger = logging.getLogger(__name__)


def _directions(dim: int, n: int) -> np.ndarray:
    """Детерминированные единичные направления: +-орты и точки Халтона на сфере"""
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    if dim == 1:
        return axes
    pts = qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    lengths = np.linalg.norm(z, axis=1)
    z = z[lengths > 1e-9] / lengths[lengths > 1e-9, None]
    return np.vstack([axes, z])


def _interior_offsets(dim: int, n: int) -> np.ndarray:
    """Детерминированные точки единичного шара (направление и радиус из Халтона)"""
    pts = qmc.Halton(d=dim + 1, scramble=False).random(n + 1)[1:]
    radius = pts[:, -1] ** (1.0 / dim)
    if dim == 1:
        direction = np.where(pts[:, :1] < 0.5, -1.0, 1.0)
    else:
        z = norm.ppf(np.clip(pts[:, :-1], 1e-12, 1 - 1e-12))
        lengths = np.maximum(np.linalg.norm(z, axis=1), 1e-12)
        direction = z / lengths[:, None]
    return direction * radius[:, None]


class _EllipsoidMap:
    """Отображение точек единичной сферы в {e: e^T P e = alpha} по отслеживаемым координатам"""

    def __init__(self, ing: TerminalIngredients, tracked: np.ndarray):
        self.ing = ing
        self.tracked = tracked
        P_r = ing.P[np.ix_(tracked, tracked)]
        self.L = np.linalg.cholesky(P_r)

    def states(self, unit: np.ndarray, alpha: float) -> np.ndarray:
        e_r = np.sqrt(alpha) * np.linalg.solve(self.L.T, unit.T).T
        x = np.tile(self.ing.x_ref, (unit.shape[0], 1))
        x[:, self.tracked] += e_r
        return x


def _admissible(model: BenchmarkModel, ing: TerminalIngredients, x: np.ndarray,
                horizon: int) -> np.ndarray:
    """Допустимость точек терминального множества на последнем шаге горизонта"""
    tracked = model.tracked_states
    x_lo, x_hi = ing.tightened_state_bounds(model.state_lower, model.state_upper, horizon)
    x_lo, x_hi = x_lo[-1], x_hi[-1]
    ok = np.all((x[:, tracked] >= x_lo[tracked]) & (x[:, tracked] <= x_hi[tracked]), axis=1)

    u = ing.u_ref + (x - ing.x_ref) @ ing.K_f.T
    u_lo, u_hi = ing.tightened_input_bounds(model.input_lower, model.input_upper, horizon + 1)
    ok &= np.all((u >= u_lo[-1]) & (u <= u_hi[-1]), axis=1)

    obs = model.obstacles
    if obs.n_obs:
        ix, iy = model.position_states
        along_track_free = ix in model.drift_states
        for center in obs.centers:
            dx = 0.0 if along_track_free else x[:, ix] - center[0]
            dy = x[:, iy] - center[1]
            ok &= dx * dx + dy * dy >= obs.r_safe ** 2
    return ok


def compute_alpha(ing: TerminalIngredients, model: BenchmarkModel,
                  alpha_max: float = 10.0, iterations: int = 60,
                  n_samples: int = 512, horizon: Optional[int] = None) -> float:
    """
    Наибольший alpha, при котором граница эллипсоида допустима

    Args:
        ing: Ингредиенты с заданными P и K_f
        model: Бенчмарк
        alpha_max: Верхняя граница бисекции
        iterations: Число шагов бисекции
        n_samples: Число направлений Халтона (плюс +-орты)
        horizon: Шаг, на котором берутся ужесточенные границы (по умолчанию N)

    Raises:
        EmptyTerminalSet: alpha < 1e-9
    """
    horizon = model.N if horizon is None else horizon
    tracked = model.tracked_states
    ellipsoid = _EllipsoidMap(ing, tracked)
    unit = _directions(len(tracked), n_samples)

    def feasible(alpha: float) -> bool:
        return bool(np.all(_admissible(model, ing, ellipsoid.states(unit, alpha), horizon)))

    if feasible(alpha_max):
        alpha = alpha_max
    else:
        lo, hi = 0.0, alpha_max
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        alpha = lo

    if alpha < 1e-9:
        raise EmptyTerminalSet(f"{model.name}: терминальное множество пусто (alpha={alpha:.3e})")
    logger.debug(f"{model.name}: alpha по ограничениям = {alpha:.6g}")
    return alpha


def check_terminal_conditions(ing: TerminalIngredients, model: BenchmarkModel,
                              n_samples: int = 1000, tol: float = 1e-6) -> Dict[str, Any]:
    """
    Выборочная проверка инвариантности и убывания V_f внутри множества

    Returns:
        Словарь с флагами invariant, decrease и худшими значениями
    """
    tracked = model.tracked_states
    ellipsoid = _EllipsoidMap(ing, tracked)
    unit = np.vstack([_interior_offsets(len(tracked), n_samples), _directions(len(tracked), 0)])
    x = ellipsoid.states(unit, ing.alpha)
    u = ing.u_ref + (x - ing.x_ref) @ ing.K_f.T

    try:
        x_next = model.step(x, u)
    except SampcError as e:
        logger.debug(f"{model.name}: шаг модели внутри терминального множества не удался: {e}")
        return {"invariant": False, "decrease": False, "max_level": np.inf, "max_decrease_gap": np.inf}

    mask = model.tracked_mask
    v_now = ing.terminal_value(x)
    v_next = ing.terminal_value(x_next * mask + ing.x_ref * (1 - mask))
    e = (x - ing.x_ref) * mask
    du = u - ing.u_ref
    stage = np.einsum("ni,ij,nj->n", e, model.Q, e) + np.einsum("ni,ij,nj->n", du, model.R, du)
    gap = v_next - v_now + stage
    return {
        "invariant": bool(np.all(v_next <= ing.alpha)),
        "decrease": bool(np.all(gap <= tol)),
        "max_level": float(np.max(v_next) / ing.alpha),
        "max_decrease_gap": float(np.max(gap)),
    }


def _reduced_lqr(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                 tracked: np.ndarray, n_x: int, tol: float, max_iter: int):
    A_r = A[np.ix_(tracked, tracked)]
    B_r = B[tracked]
    P_r, K_r = solve_dare(A_r, B_r, Q[np.ix_(tracked, tracked)], R, tol=tol, max_iter=max_iter)
    P = np.zeros((n_x, n_x))
    P[np.ix_(tracked, tracked)] = P_r
    K_f = np.zeros((B.shape[1], n_x))
    K_f[:, tracked] = -K_r
    return P, K_f, spectral_radius(A_r - B_r @ K_r)


def design_terminal(model: BenchmarkModel, settings: Optional[Mapping[str, Any]] = None) -> TerminalIngredients:
    """
    Полный синтез терминальных ингредиентов для бенчмарка

    Args:
        model: Бенчмарк
        settings: Секция terminal конфигурации

    Returns:
        Ингредиенты с проверенными инвариантностью и убыванием

    Raises:
        NoConvergence: DARE не сошлось
        EmptyTerminalSet: alpha не найден
    """
    s = dict(DEFAULTS["terminal"], **(settings or {}))
    tracked = model.tracked_states
    A, B = linearize(model, model.x_ref, model.u_ref)

    drift = list(model.drift_states)
    if drift and np.max(np.abs(A[np.ix_(tracked, drift)]), initial=0.0) > 1e-8:
        raise NoConvergence(f"{model.name}: дрейфовые координаты влияют на остальные, приведение невозможно")

    inflation = float(s["cost_inflation"])
    P, K_f, rho_f = _reduced_lqr(A, B, inflation * model.Q, inflation * model.R, tracked,
                                 model.n_x, float(s["dare_tol"]), int(s["dare_max_iter"]))
    if s.get("separate_tube_gain"):
        _, K_delta, _ = _reduced_lqr(A, B, float(s["tube_q_scale"]) * model.Q, model.R, tracked,
                                     model.n_x, float(s["dare_tol"]), int(s["dare_max_iter"]))
    else:
        K_delta = K_f.copy()

    A_r, B_r = A[np.ix_(tracked, tracked)], B[tracked]
    contraction = spectral_radius(A_r + B_r @ K_delta[:, tracked])
    kappa = float(np.max(np.sum(np.abs(B), axis=1)))
    alpha_max = float(model.alpha_max if model.alpha_max is not None else s["alpha_max"])

    ing = TerminalIngredients(
        P=P, K_f=K_f, alpha=alpha_max, K_delta=K_delta,
        x_ref=model.x_ref, u_ref=model.u_ref,
        input_lower=model.input_lower, input_upper=model.input_upper,
        epsilon=float(s["epsilon"]), contraction=contraction, kappa=kappa, rho_f=rho_f,
    )
    alpha = compute_alpha(ing, model, alpha_max=alpha_max, iterations=int(s["bisection_iters"]),
                          n_samples=int(s["boundary_samples"]))
    ing = ing.with_alpha(alpha)

    for shrink in range(int(s["max_shrinks"]) + 1):
        check = check_terminal_conditions(ing, model, n_samples=int(s["invariance_samples"]),
                                          tol=float(s["decrease_tol"]))
        if check["invariant"] and check["decrease"]:
            break
        logger.debug(
            f"{model.name}: alpha={ing.alpha:.6g} не прошел проверку "
            f"(уровень {check['max_level']:.4f}, зазор {check['max_decrease_gap']:.3e}), уменьшаем"
        )
        ing = ing.with_alpha(ing.alpha * float(s["shrink_factor"]))
    else:
        raise EmptyTerminalSet(f"{model.name}: не удалось подобрать alpha с инвариантностью")

    if ing.alpha < 1e-9:
        raise EmptyTerminalSet(f"{model.name}: терминальное множество пусто (alpha={ing.alpha:.3e})")

    logger.info(
        f"{model.name}: терминальные ингредиенты готовы, rho(A+BK_f)={rho_f:.6f}, "
        f"alpha={ing.alpha:.6g}, уменьшений alpha: {shrink}"
    )
    return ing
