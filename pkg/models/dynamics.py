"""
Дискретные модели трех бенчмарков

Все функции векторизованы по ведущим осям: x имеет форму (..., n_x),
u - (..., n_u). Скрытого состояния и случайности нет.
"""
import logging
from typing import Any, Callable, Mapping

import numpy as np

from errors import LowSpeedSingularity, NonFiniteState

logger = logging.getLogger(__name__)

QUADCOPTER_CONSTANTS = {
    "d0": 80.0,
    "d1": 8.0,
    "n0": 40.0,
    "k_T": 0.91,
    "m": 1.3,
    "g": 9.81,
    "substeps": 10,
}

DYNAMIC_CONSTANTS = {
    "l_f": 1.35,
    "l_r": 1.21,
    "C_f": 1.5e5,
    "C_r": 1.5e5,
    "mass": 1500.0,
    "I_z": 2500.0,
    "tau_a": 0.2,
    "v_min": 0.5,
    "substeps": 8,
}


def _check_finite(x_next: np.ndarray, model_name: str) -> np.ndarray:
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState(f"{model_name}: неконечное состояние после шага")
    return x_next


def rk4(rhs: Callable[[np.ndarray, np.ndarray], np.ndarray],
        x: np.ndarray, u: np.ndarray, T_s: float, substeps: int) -> np.ndarray:
    """Классический RK4 с substeps равными подшагами, u постоянно на шаге"""
    h = T_s / substeps
    for _ in range(substeps):
        k1 = rhs(x, u)
        k2 = rhs(x + 0.5 * h * k1, u)
        k3 = rhs(x + 0.5 * h * k2, u)
        k4 = rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def quadcopter_rhs(x: np.ndarray, u: np.ndarray, p: Mapping[str, Any] = QUADCOPTER_CONSTANTS) -> np.ndarray:
    """
    Непрерывная модель квадрокоптера

    Состояние [x1, x2, x3, v1, v2, v3, phi1, omega1, phi2, omega2],
    вход [u1, u2, u3].
    """
    g = p["g"]
    dx = np.empty(np.broadcast(x, u[..., :1]).shape[:-1] + (10,), dtype=np.float64)
    dx[..., 0:3] = x[..., 3:6]
    dx[..., 3] = g * np.tan(x[..., 6])
    dx[..., 4] = g * np.tan(x[..., 8])
    dx[..., 5] = -g + (p["k_T"] / p["m"]) * u[..., 2]
    dx[..., 6] = -p["d1"] * x[..., 6] + x[..., 7]
    dx[..., 7] = -p["d0"] * x[..., 6] + p["n0"] * u[..., 0]
    dx[..., 8] = -p["d1"] * x[..., 8] + x[..., 9]
    dx[..., 9] = -p["d0"] * x[..., 8] + p["n0"] * u[..., 1]
    return dx


def hover_input(p: Mapping[str, Any] = QUADCOPTER_CONSTANTS) -> np.ndarray:
    """Вход висения [0, 0, g*m/k_T]"""
    return np.array([0.0, 0.0, p["g"] * p["m"] / p["k_T"]])


def step_quadcopter(x: np.ndarray, u: np.ndarray, T_s: float,
                    p: Mapping[str, Any] = QUADCOPTER_CONSTANTS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(all="ignore"):
        x_next = rk4(lambda s, a: quadcopter_rhs(s, a, p), x, u, T_s, int(p.get("substeps", 10)))
    return _check_finite(x_next, "quadcopter")


def step_kinematic(x: np.ndarray, u: np.ndarray, T_s: float,
                   p: Mapping[str, Any] = None) -> np.ndarray:
    """Явный Эйлер кинематической модели: x = [p_x, p_y, psi, v], u = [delta, a]"""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    x_next = np.empty(np.broadcast(x, u[..., :1]).shape[:-1] + (4,), dtype=np.float64)
    x_next[..., 0] = x[..., 0] + T_s * x[..., 3] * np.cos(x[..., 2])
    x_next[..., 1] = x[..., 1] + T_s * x[..., 3] * np.sin(x[..., 2])
    x_next[..., 2] = x[..., 2] + T_s * u[..., 0]
    x_next[..., 3] = x[..., 3] + T_s * u[..., 1]
    return _check_finite(x_next, "kinematic")


def dynamic_bicycle_rhs(x: np.ndarray, u: np.ndarray,
                        p: Mapping[str, Any] = DYNAMIC_CONSTANTS) -> np.ndarray:
    """
    Одноколейная модель с линейными шинами

    Состояние [p_x, p_y, psi, v, r, beta, a, delta], вход [delta_dot, a_cmd];
    a - ускорение с апериодическим запаздыванием tau_a.
    """
    v = x[..., 3]
    if np.any(v <= p["v_min"]):
        raise LowSpeedSingularity(
            f"Скорость {float(np.min(v)):.4f} м/с не выше v_min={p['v_min']} м/с"
        )
    psi, r, beta, acc, delta = x[..., 2], x[..., 4], x[..., 5], x[..., 6], x[..., 7]
    alpha_f = delta - beta - p["l_f"] * r / v
    alpha_r = -beta + p["l_r"] * r / v
    f_yf = p["C_f"] * alpha_f
    f_yr = p["C_r"] * alpha_r

    dx = np.empty(np.broadcast(x, u[..., :1]).shape[:-1] + (8,), dtype=np.float64)
    dx[..., 0] = v * np.cos(psi + beta)
    dx[..., 1] = v * np.sin(psi + beta)
    dx[..., 2] = r
    dx[..., 3] = acc
    dx[..., 4] = (p["l_f"] * f_yf * np.cos(delta) - p["l_r"] * f_yr) / p["I_z"]
    dx[..., 5] = (f_yf * np.cos(delta) + f_yr) / (p["mass"] * v) - r
    dx[..., 6] = (u[..., 1] - acc) / p["tau_a"]
    dx[..., 7] = u[..., 0]
    return dx


def step_dynamic_bicycle(x: np.ndarray, u: np.ndarray, T_s: float,
                         p: Mapping[str, Any] = DYNAMIC_CONSTANTS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(all="ignore"):
        x_next = rk4(lambda s, a: dynamic_bicycle_rhs(s, a, p), x, u, T_s, int(p.get("substeps", 8)))
    return _check_finite(x_next, "dynamic")
