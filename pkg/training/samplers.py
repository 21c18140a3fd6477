"""
Окна начальных условий для генерации датасетов
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Optional

import numpy as np

from config import DEFAULTS
from errors import ConfigError
from models.benchmarks import Benchmark, BenchmarkModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxSampler:
    """Равномерное распределение в прямоугольном окне"""

    lower: np.ndarray
    upper: np.ndarray

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def make_sampler(model: BenchmarkModel, settings: Optional[Mapping[str, Any]] = None) -> BoxSampler:
    """
    Окно выборки для бенчмарка

    Квадрокоптер: положения +-pos, скорости +-vel, углы +-attitude_frac * phi_max,
    угловые скорости +-omega. Машины: p_x0 +- gamma_p, полоса +- gamma_p,
    курс +- gamma_psi, скорость v_ref +- gamma_v; остальные координаты равны 0.
    """
    s = dict(DEFAULTS["sampler"].get(model.name, {}), **(settings or {}))

    if model.name == Benchmark.QUADCOPTER.value:
        phi = s["attitude_frac"] * model.state_upper[6]
        half = np.array([s["pos"]] * 3 + [s["vel"]] * 3 + [phi, s["omega"], phi, s["omega"]])
        center = model.x_ref
    elif model.name in (Benchmark.KINEMATIC_ST.value, Benchmark.DYNAMIC_ST.value):
        half = np.zeros(model.n_x)
        half[:4] = [s["gamma_p"], s["gamma_p"], math.radians(s["gamma_psi_deg"]), s["gamma_v"]]
        center = model.x_ref.copy()
        center[0] = s["p_x0"]
    else:
        raise ConfigError(f"Нет окна выборки для бенчмарка {model.name}")

    return BoxSampler(lower=center - half, upper=center + half)
