"""
Политика в физических единицах поверх сети в нормированных координатах
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np

from errors import ConfigError, DimensionMismatch, SampcError
from models.benchmarks import BenchmarkModel
from policy.networks import MlpPolicy, RnnPolicy

logger = logging.getLogger(__name__)

FEEDS = ("measured", "rollout")

Network = Union[MlpPolicy, RnnPolicy]


@dataclass(frozen=True)
class Normalizer:
    """
    Аффинная нормировка: состояния по статистике датасета, входы по границам

    x_n = (x - x_mean) / x_scale,  u_n = (u - u_offset) / u_scale
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    u_offset: np.ndarray
    u_scale: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray, model: BenchmarkModel) -> "Normalizer":
        states = np.asarray(states, dtype=np.float64)
        x_mean = states.mean(axis=0)
        x_std = states.std(axis=0)
        x_scale = np.where(x_std < 1e-12, 1.0, x_std)

        lo, hi = model.input_lower, model.input_upper
        finite = np.isfinite(lo) & np.isfinite(hi)
        u_offset = np.where(finite, 0.5 * (lo + hi), 0.0)
        u_scale = np.where(finite, 0.5 * (hi - lo), 1.0)
        return cls(x_mean, x_scale, u_offset, u_scale)

    @classmethod
    def identity(cls, n_x: int, n_u: int) -> "Normalizer":
        return cls(np.zeros(n_x), np.ones(n_x), np.zeros(n_u), np.ones(n_u))

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_scale

    def normalize_u(self, u: np.ndarray) -> np.ndarray:
        return (u - self.u_offset) / self.u_scale

    def denormalize_u(self, u_n: np.ndarray) -> np.ndarray:
        return u_n * self.u_scale + self.u_offset

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "u_offset": self.u_offset.tolist(),
            "u_scale": self.u_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Normalizer":
        return cls(*(np.asarray(data[k], dtype=np.float64) for k in ("x_mean", "x_scale", "u_offset", "u_scale")))


class NeuralPolicy:
    """
    Обученная политика Pi: x -> последовательность входов (N, n_u)

    Args:
        net: MLP или RNN
        normalizer: Константы нормировки
        model: Модель бенчмарка (нужна только для feed='rollout')
        feed: 'measured' - RNN получает x на каждом шаге;
              'rollout' - RNN получает номинальное состояние, предсказанное
              моделью по уже сгенерированным входам
    """

    def __init__(self, net: Network, normalizer: Normalizer,
                 model: Optional[BenchmarkModel] = None, feed: str = "measured"):
        if feed not in FEEDS:
            raise ConfigError(f"Неизвестный режим подачи RNN: {feed}")
        if feed == "rollout" and (net.arch != "rnn" or model is None):
            raise ConfigError("Режим 'rollout' требует RNN и модель бенчмарка")
        self.net = net
        self.normalizer = normalizer
        self.model = model
        self.feed = feed
        self.N = net.N
        self.n_x = net.n_x
        self.n_u = net.n_u

    def _rollout_feed(self, X: np.ndarray) -> np.ndarray:
        net, norm = self.net, self.normalizer
        B = X.shape[0]
        h = np.zeros((B, net.n_h))
        x_t = X.copy()
        out = np.empty((B, self.N, self.n_u))
        for t in range(self.N):
            h, y = net.cell(norm.normalize_x(x_t), h)
            out[:, t] = norm.denormalize_u(y)
            x_t = self._advance(x_t, out[:, t], t)
        return out

    def _advance(self, x_t: np.ndarray, u_t: np.ndarray, t: int) -> np.ndarray:
        """
        Шаг номинального прогноза для подачи RNN

        Строка, на которой модель не определена, сохраняет последнее конечное
        состояние; остальные строки пакета продвигаются как поодиночке.
        """
        try:
            return self.model.step(x_t, u_t)
        except SampcError:
            pass
        nxt = x_t.copy()
        for i in range(x_t.shape[0]):
            try:
                nxt[i] = self.model.step(x_t[i:i + 1], u_t[i:i + 1])[0]
            except SampcError as e:
                logger.debug(f"Прогноз подачи RNN для строки {i} прерван на шаге {t}: {e}")
        return nxt

    def batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_x:
            raise DimensionMismatch(f"Пакет состояний формы {X.shape}, ожидалось (B, {self.n_x})")
        if self.feed == "rollout":
            return self._rollout_feed(X)
        y = self.net.forward(self.normalizer.normalize_x(X))
        return self.normalizer.denormalize_u(y)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_x,):
            raise DimensionMismatch(f"Состояние формы {x.shape}, ожидалось ({self.n_x},)")
        return self.batch(x[None, :])[0]
