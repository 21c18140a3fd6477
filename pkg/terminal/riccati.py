"""
Линеаризация дискретной модели и дискретное уравнение Риккати
"""
import logging
from typing import Tuple

import numpy as np
import scipy.linalg

from errors import DimensionMismatch, NoConvergence, NotAnEquilibrium
from models.benchmarks import BenchmarkModel

logger = logging.getLogger(__name__)


def step_jacobians(model: BenchmarkModel, x: np.ndarray, u: np.ndarray,
                   h: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Центральные конечные разности одношагового отображения

    Все возмущения считаются одним векторизованным вызовом модели.

    Args:
        model: Бенчмарк
        x: Состояния формы (..., n_x)
        u: Входы формы (..., n_u)
        h: Шаг разности

    Returns:
        A формы (..., n_x, n_x) и B формы (..., n_x, n_u)
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n_x, n_u = model.n_x, model.n_u
    n_z = n_x + n_u
    lead = x.shape[:-1]

    z = np.concatenate([x, np.broadcast_to(u, lead + (n_u,))], axis=-1)
    shifts = h * np.eye(n_z)
    # (..., 2*n_z, n_z): сначала +h по всем координатам, затем -h
    z_pert = z[..., None, :] + np.concatenate([shifts, -shifts], axis=0)
    f = model.step(z_pert[..., :n_x], z_pert[..., n_x:])
    jac = (f[..., :n_z, :] - f[..., n_z:, :]) / (2.0 * h)
    jac = np.swapaxes(jac, -1, -2)
    return jac[..., :n_x], jac[..., n_x:]


def linearize(model: BenchmarkModel, x_eq: np.ndarray, u_eq: np.ndarray,
              h: float = 1e-6, tol: float = 1e-8) -> Tuple[np.ndarray, np.ndarray]:
    """
    Якобианы (A, B) в точке равновесия

    Для дрейфовых координат модели проверяется только равновесие
    остальных координат (относительное равновесие).

    Raises:
        NotAnEquilibrium: Невязка равновесия не меньше tol
    """
    x_eq = np.asarray(x_eq, dtype=np.float64)
    u_eq = np.asarray(u_eq, dtype=np.float64)
    if x_eq.shape != (model.n_x,) or u_eq.shape != (model.n_u,):
        raise DimensionMismatch(f"{model.name}: неверные размерности точки линеаризации")

    residual = model.state_error(model.step(x_eq, u_eq)) - model.state_error(x_eq)
    res_norm = float(np.max(np.abs(residual)))
    if not res_norm < tol:
        raise NotAnEquilibrium(f"{model.name}: невязка равновесия {res_norm:.3e} >= {tol:.1e}")

    return step_jacobians(model, x_eq, u_eq, h)


def _riccati_map(P: np.ndarray, A: np.ndarray, B: np.ndarray,
                 Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    BtP = B.T @ P
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
    return 0.5 * (P_next + P_next.T)


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-10, max_iter: int = 100000) -> Tuple[np.ndarray, np.ndarray]:
    """
    Решение DARE: решение scipy, уточненное итерацией неподвижной точки

    Прямое решение scipy.linalg.solve_discrete_are служит начальной
    точкой; итерация Риккати доводит невязку до tol и проверяет
    стабилизируемость. Без решения scipy итерация стартует с Q.
    Критерий остановки: ||P_{k+1} - P_k||_inf < tol * max(1, ||P_k||_inf).

    Returns:
        (P, K), K = (R + B^T P B)^{-1} B^T P A

    Raises:
        NoConvergence: Итерация не сошлась (пара (A, B) не стабилизируема)
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionMismatch(f"DARE: A{A.shape}, B{B.shape}, Q{Q.shape}, R{R.shape}")

    P = Q.copy()
    try:
        P_init = scipy.linalg.solve_discrete_are(A, B, Q, R)
        if np.all(np.isfinite(P_init)):
            P = 0.5 * (P_init + P_init.T)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.debug(f"DARE: стартуем с Q ({e})")

    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            try:
                P_next = _riccati_map(P, A, B, Q, R)
            except np.linalg.LinAlgError as e:
                raise NoConvergence(f"DARE: вырожденная система на итерации {it}") from e
            if not np.all(np.isfinite(P_next)):
                raise NoConvergence(f"DARE: расходимость на итерации {it}")
            delta = float(np.max(np.abs(P_next - P)))
            P = P_next
            if delta < tol * max(1.0, float(np.max(np.abs(P)))):
                break
        else:
            raise NoConvergence(f"DARE не сошлось за {max_iter} итераций (dP={delta:.3e})")

    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    logger.debug(f"DARE сошлось за {it} итераций")
    return P, K


def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))
