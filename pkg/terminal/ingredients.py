import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from errors import ArtifactCorrupted, DimensionMismatch
from utils.artifacts import dump_matrices_text, parse_matrices_text, sha256_bytes

logger = logging.getLogger(__name__)

_MATRIX_FIELDS = ("P", "K_f", "K_delta", "x_ref", "u_ref", "input_lower", "input_upper")
_SCALAR_FIELDS = ("alpha", "epsilon", "contraction", "kappa", "rho_f")


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    """
    Терминальные ингредиенты и параметры трубки

    Соглашение о знаке: u = u_ref + K (x - x_ref) для K_f и K_delta.
    input_lower/input_upper - физические границы входа (для насыщения
    терминального регулятора). Ужесточение ограничений на шаге k:
    c_k = kappa * epsilon * (1 - contraction^k) / (1 - contraction).
    """

    P: np.ndarray
    K_f: np.ndarray
    alpha: float
    K_delta: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    epsilon: float = 0.0
    contraction: float = 0.0
    kappa: float = 0.0
    rho_f: float = 0.0

    def __post_init__(self):
        for name in _MATRIX_FIELDS:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n_x, n_u = self.x_ref.shape[0], self.u_ref.shape[0]
        if self.P.shape != (n_x, n_x) or self.K_f.shape != (n_u, n_x) or self.K_delta.shape != (n_u, n_x):
            raise DimensionMismatch(
                f"Ингредиенты: P{self.P.shape}, K_f{self.K_f.shape}, K_delta{self.K_delta.shape} "
                f"при n_x={n_x}, n_u={n_u}"
            )
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n_x(self) -> int:
        return int(self.x_ref.shape[0])

    @property
    def n_u(self) -> int:
        return int(self.u_ref.shape[0])

    def with_alpha(self, alpha: float) -> "TerminalIngredients":
        return replace(self, alpha=float(alpha))

    def margin(self, k: int) -> float:
        """Запас ужесточения ограничений состояния на шаге k"""
        if self.epsilon == 0.0 or k <= 0:
            return 0.0
        lam = self.contraction
        growth = float(k) if abs(1.0 - lam) < 1e-12 else (1.0 - lam ** k) / (1.0 - lam)
        return self.kappa * self.epsilon * growth

    def input_margin(self, k: int) -> float:
        return float(np.max(np.sum(np.abs(self.K_delta), axis=1), initial=0.0)) * self.margin(k)

    def tightened_state_bounds(self, lower: np.ndarray, upper: np.ndarray,
                               horizon: int) -> Tuple[np.ndarray, np.ndarray]:
        """Границы состояния по шагам 0..horizon, формы (horizon+1, n_x)"""
        c = np.array([self.margin(k) for k in range(horizon + 1)])[:, None]
        return lower + c, upper - c

    def tightened_input_bounds(self, lower: np.ndarray, upper: np.ndarray,
                               horizon: int) -> Tuple[np.ndarray, np.ndarray]:
        """Границы входа по шагам 0..horizon-1, формы (horizon, n_u)"""
        c = np.array([self.input_margin(k) for k in range(horizon)])[:, None]
        return lower + c, upper - c

    def terminal_value(self, x: np.ndarray) -> np.ndarray:
        """V_f(x) = (x - x_ref)^T P (x - x_ref), векторизовано по ведущим осям"""
        e = np.asarray(x, dtype=np.float64) - self.x_ref
        return np.einsum("...i,ij,...j->...", e, self.P, e)


def in_terminal_set(x: np.ndarray, ing: TerminalIngredients, slack: float = 0.0) -> bool:
    """Граница множества входит в него: V_f(x) <= alpha"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ing.n_x,):
        raise DimensionMismatch(f"Состояние формы {x.shape}, ожидалось ({ing.n_x},)")
    return bool(ing.terminal_value(x) <= ing.alpha + slack)


def terminal_control(x: np.ndarray, ing: TerminalIngredients) -> Tuple[np.ndarray, bool]:
    """
    Терминальный регулятор u_ref + K_f (x - x_ref) с насыщением

    Returns:
        (u, clamped) - вход и признак срабатывания насыщения
    """
    x = np.asarray(x, dtype=np.float64)
    u = ing.u_ref + ing.K_f @ (x - ing.x_ref)
    u_sat = np.clip(u, ing.input_lower, ing.input_upper)
    clamped = bool(np.any(u_sat != u))
    if clamped:
        logger.debug(f"Терминальный регулятор в насыщении: {u} -> {u_sat}")
    return u_sat, clamped


def ingredients_to_text(ing: TerminalIngredients) -> str:
    matrices = {name: getattr(ing, name) for name in _MATRIX_FIELDS}
    scalars = {name: getattr(ing, name) for name in _SCALAR_FIELDS}
    return dump_matrices_text(matrices, scalars)


def save_ingredients(path: Union[str, Path], ing: TerminalIngredients) -> str:
    """Записать ингредиенты в текстовый артефакт и вернуть его sha256"""
    text = ingredients_to_text(ing)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    checksum = sha256_bytes(text.encode("utf-8"))
    logger.info(f"Терминальные ингредиенты сохранены: {path} (sha256 {checksum[:12]})")
    return checksum


def load_ingredients(path: Union[str, Path]) -> Tuple[TerminalIngredients, str]:
    """
    Прочитать ингредиенты

    Returns:
        (ингредиенты, sha256 файла)
    """
    text = Path(path).read_text(encoding="utf-8")
    matrices, scalars, _ = parse_matrices_text(text)
    missing = [n for n in _MATRIX_FIELDS if n not in matrices] + [n for n in _SCALAR_FIELDS if n not in scalars]
    if missing:
        raise ArtifactCorrupted(f"{path}: нет полей {', '.join(missing)}")

    fields: Dict[str, Any] = {name: scalars[name] for name in _SCALAR_FIELDS}
    for name in _MATRIX_FIELDS:
        m = matrices[name]
        # векторы записаны строкой 1 x n
        fields[name] = m.reshape(-1) if name in ("x_ref", "u_ref", "input_lower", "input_upper") else m
    return TerminalIngredients(**fields), sha256_bytes(text.encode("utf-8"))
