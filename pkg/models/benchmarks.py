import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULTS
from errors import ConfigError, DimensionMismatch
from models.dynamics import (
    DYNAMIC_CONSTANTS,
    QUADCOPTER_CONSTANTS,
    hover_input,
    step_dynamic_bicycle,
    step_kinematic,
    step_quadcopter,
)

logger = logging.getLogger(__name__)

StepFn = Callable[[np.ndarray, np.ndarray, float, Mapping[str, Any]], np.ndarray]


class Benchmark(str, Enum):
    QUADCOPTER = "quadcopter"
    KINEMATIC_ST = "kinematic"
    DYNAMIC_ST = "dynamic"


def _frozen(values: Any, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"ожидалась форма {shape}, получено {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ObstacleSet:
    """Круговые препятствия с общим радиусом безопасности"""

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    r_safe: float = 1.0

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64).reshape(-1, 2)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if not self.r_safe > 0:
            raise ConfigError(f"r_safe должен быть положительным, получено {self.r_safe}")

    @property
    def n_obs(self) -> int:
        return int(self.centers.shape[0])


@dataclass(frozen=True, eq=False)
class BenchmarkModel:
    """
    Бенчмарк: дискретная динамика, размерности, ограничения и веса

    drift_states - координаты, вдоль которых модель инвариантна к сдвигу
    (продольная координата машин). Для них нет ошибки слежения:
    стоимость, терминальное множество и условие равновесия их не учитывают.
    """

    name: str
    n_x: int
    n_u: int
    T_s: float
    N: int
    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    state_lower: np.ndarray
    state_upper: np.ndarray
    step_fn: StepFn
    params: Mapping[str, Any] = field(default_factory=dict)
    obstacles: ObstacleSet = field(default_factory=ObstacleSet)
    position_states: Optional[Tuple[int, int]] = None
    drift_states: Tuple[int, ...] = ()
    alpha_max: Optional[float] = None
    state_names: Tuple[str, ...] = ()
    input_names: Tuple[str, ...] = ()

    def __post_init__(self):
        n_x, n_u = self.n_x, self.n_u
        object.__setattr__(self, "Q", _frozen(self.Q, (n_x, n_x)))
        object.__setattr__(self, "R", _frozen(self.R, (n_u, n_u)))
        object.__setattr__(self, "x_ref", _frozen(self.x_ref, (n_x,)))
        object.__setattr__(self, "u_ref", _frozen(self.u_ref, (n_u,)))
        object.__setattr__(self, "input_lower", _frozen(self.input_lower, (n_u,)))
        object.__setattr__(self, "input_upper", _frozen(self.input_upper, (n_u,)))
        object.__setattr__(self, "state_lower", _frozen(self.state_lower, (n_x,)))
        object.__setattr__(self, "state_upper", _frozen(self.state_upper, (n_x,)))
        object.__setattr__(self, "drift_states", tuple(int(i) for i in self.drift_states))

        if not np.allclose(self.Q, self.Q.T) or np.min(np.linalg.eigvalsh(self.Q)) < -1e-12:
            raise ConfigError(f"{self.name}: Q должна быть симметричной и неотрицательно определенной")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as e:
            raise ConfigError(f"{self.name}: R должна быть положительно определенной") from e
        if not np.all(self.input_lower < self.input_upper):
            raise ConfigError(f"{self.name}: нижние границы входа должны быть меньше верхних")
        if self.obstacles.n_obs and self.position_states is None:
            raise ConfigError(f"{self.name}: для препятствий нужны индексы координат положения")

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Один шаг дискретной динамики (векторизовано по ведущим осям)"""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if x.shape[-1] != self.n_x or u.shape[-1] != self.n_u:
            raise DimensionMismatch(
                f"{self.name}: ожидались x[{self.n_x}], u[{self.n_u}], получено {x.shape}, {u.shape}"
            )
        return self.step_fn(x, u, self.T_s, self.params)

    @property
    def tracked_mask(self) -> np.ndarray:
        """1 для координат с ошибкой слежения, 0 для дрейфовых"""
        mask = np.ones(self.n_x)
        mask[list(self.drift_states)] = 0.0
        return mask

    @property
    def tracked_states(self) -> np.ndarray:
        return np.flatnonzero(self.tracked_mask)

    def state_error(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_ref) * self.tracked_mask

    def clamp_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_lower, self.input_upper)


def _diag(values: Sequence[float]) -> np.ndarray:
    return np.diag(np.array(values, dtype=np.float64))


def _obstacles(settings: Mapping[str, Any]) -> ObstacleSet:
    obs = settings.get("obstacles") or {}
    return ObstacleSet(centers=obs.get("centers", []), r_safe=float(obs.get("r_safe", 1.0)))


def build_quadcopter(settings: Optional[Mapping[str, Any]] = None) -> BenchmarkModel:
    s = dict(DEFAULTS["benchmarks"]["quadcopter"], **(settings or {}))
    params = {k: s.get(k, v) for k, v in QUADCOPTER_CONSTANTS.items()}
    inf = math.inf
    tilt, phi_max = s["u_tilt_max"], s["phi_max"]
    state_bound = np.full(10, inf)
    state_bound[[6, 8]] = phi_max
    return BenchmarkModel(
        name=Benchmark.QUADCOPTER.value,
        n_x=10,
        n_u=3,
        T_s=float(s["T_s"]),
        N=int(s["N"]),
        Q=_diag(s["Q"]),
        R=_diag(s["R"]),
        x_ref=np.zeros(10),
        u_ref=hover_input(params),
        input_lower=[-tilt, -tilt, 0.0],
        input_upper=[tilt, tilt, s["u_thrust_max_g"] * params["g"]],
        state_lower=-state_bound,
        state_upper=state_bound,
        step_fn=step_quadcopter,
        params=params,
        alpha_max=s.get("alpha_max"),
        state_names=("x1", "x2", "x3", "v1", "v2", "v3", "phi1", "omega1", "phi2", "omega2"),
        input_names=("u1", "u2", "u3"),
    )


def build_kinematic(settings: Optional[Mapping[str, Any]] = None) -> BenchmarkModel:
    s = dict(DEFAULTS["benchmarks"]["kinematic"], **(settings or {}))
    inf = math.inf
    delta_max = math.radians(s["delta_max_deg"])
    return BenchmarkModel(
        name=Benchmark.KINEMATIC_ST.value,
        n_x=4,
        n_u=2,
        T_s=float(s["T_s"]),
        N=int(s["N"]),
        Q=_diag(s["Q"]),
        R=_diag(s["R"]),
        x_ref=[0.0, s["lane_y"], 0.0, s["v_ref"]],
        u_ref=[0.0, 0.0],
        input_lower=[-delta_max, s["a_min"]],
        input_upper=[delta_max, s["a_max"]],
        state_lower=[s["p_min"], s["p_min"], -inf, 0.0],
        state_upper=[s["p_max"], s["p_max"], inf, s["v_max"]],
        step_fn=step_kinematic,
        params={},
        obstacles=_obstacles(s),
        position_states=(0, 1),
        drift_states=(0,),
        alpha_max=s.get("alpha_max"),
        state_names=("p_x", "p_y", "psi", "v"),
        input_names=("delta", "a"),
    )


def build_dynamic(settings: Optional[Mapping[str, Any]] = None) -> BenchmarkModel:
    s = dict(DEFAULTS["benchmarks"]["dynamic"], **(settings or {}))
    params = {k: s.get(k, v) for k, v in DYNAMIC_CONSTANTS.items()}
    inf = math.inf
    delta_max = math.radians(s["delta_max_deg"])
    v_floor = float(s.get("v_floor", 2.0 * params["v_min"]))
    return BenchmarkModel(
        name=Benchmark.DYNAMIC_ST.value,
        n_x=8,
        n_u=2,
        T_s=float(s["T_s"]),
        N=int(s["N"]),
        Q=_diag(s["Q"]),
        R=_diag(s["R"]),
        x_ref=[0.0, s["lane_y"], 0.0, s["v_ref"], 0.0, 0.0, 0.0, 0.0],
        u_ref=[0.0, 0.0],
        input_lower=[-s["delta_dot_max"], s["a_min"]],
        input_upper=[s["delta_dot_max"], s["a_max"]],
        state_lower=[s["p_min"], s["p_min"], -inf, v_floor, -inf, -inf, -inf, -delta_max],
        state_upper=[s["p_max"], s["p_max"], inf, s["v_max"], inf, inf, inf, delta_max],
        step_fn=step_dynamic_bicycle,
        params=params,
        obstacles=_obstacles(s),
        position_states=(0, 1),
        drift_states=(0,),
        alpha_max=s.get("alpha_max"),
        state_names=("p_x", "p_y", "psi", "v", "r", "beta", "a", "delta"),
        input_names=("delta_dot", "a_cmd"),
    )


_BUILDERS: Dict[str, Callable[[Optional[Mapping[str, Any]]], BenchmarkModel]] = {
    Benchmark.QUADCOPTER.value: build_quadcopter,
    Benchmark.KINEMATIC_ST.value: build_kinematic,
    Benchmark.DYNAMIC_ST.value: build_dynamic,
}


def build_model(name: str, settings: Optional[Mapping[str, Any]] = None) -> BenchmarkModel:
    """Построить бенчмарк по имени из секции benchmarks.<name> конфигурации"""
    try:
        builder = _BUILDERS[Benchmark(name).value]
    except ValueError as e:
        raise ConfigError(f"Неизвестный бенчмарк: {name}") from e
    model = builder(settings)
    logger.debug(f"Модель {model.name}: n_x={model.n_x}, n_u={model.n_u}, T_s={model.T_s}, N={model.N}")
    return model
