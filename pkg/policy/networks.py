"""
Сети политик: MLP с выходом на весь горизонт и последовательная RNN

Обе сети работают в нормированных координатах и выдают (N, n_u) для
одного состояния или (B, N, n_u) для пакета. Градиенты считаются вручную
(обратное распространение и BPTT).

Порядок параметров в плоском векторе:
* MLP: для каждого слоя W (построчно), затем b;
* RNN: W_x, W_h, b_h, W_y, b_y.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionMismatch

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "identity")


def mlp_last_layer_param_count(n_u: int, N: int, n_h: int) -> int:
    """Параметры выходного слоя MLP: n_u * N * (n_h + 1)"""
    return n_u * N * (n_h + 1)


def rnn_param_count(n_x: int, n_h: int, n_u: int) -> int:
    """Параметры RNN: n_h*n_x + n_h^2 + n_u*n_h + n_h + n_u (не зависит от N)"""
    return n_h * n_x + n_h * n_h + n_u * n_h + n_h + n_u


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MlpPolicy:
    """Многослойный перцептрон: ширины [n_x, h_1, ..., h_L, n_u * N]"""

    arch = "mlp"

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                 n_u: int, N: int, activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"Неизвестная активация: {activation}")
        self.weights: List[np.ndarray] = [np.array(w, dtype=np.float64) for w in weights]
        self.biases: List[np.ndarray] = [np.array(b, dtype=np.float64) for b in biases]
        self.n_u = int(n_u)
        self.N = int(N)
        self.activation = activation
        if self.weights[-1].shape[0] != self.n_u * self.N:
            raise DimensionMismatch(
                f"Выход MLP {self.weights[-1].shape[0]} != n_u * N = {self.n_u * self.N}"
            )

    @classmethod
    def initialize(cls, n_x: int, hidden: Sequence[int], n_u: int, N: int,
                   rng: np.random.Generator, activation: str = "tanh") -> "MlpPolicy":
        widths = [n_x, *hidden, n_u * N]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(_uniform(rng, (fan_out, fan_in), fan_in))
            biases.append(_uniform(rng, (fan_out,), fan_in))
        return cls(weights, biases, n_u, N, activation)

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_x(self) -> int:
        return self.weights[0].shape[1]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def last_layer_param_count(self) -> int:
        return self.weights[-1].size + self.biases[-1].size

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.param_count,):
            raise DimensionMismatch(f"Вектор параметров {theta.shape}, ожидалось ({self.param_count},)")
        offset = 0
        for w, b in zip(self.weights, self.biases):
            for p in (w, b):
                p[...] = theta[offset:offset + p.size].reshape(p.shape)
                offset += p.size

    def _hidden(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.activation == "tanh" else z

    def _forward_cache(self, X: np.ndarray) -> List[np.ndarray]:
        acts = [X]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            acts.append(z if i == last else self._hidden(z))
        return acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_x:
            raise DimensionMismatch(f"Вход MLP формы {x.shape}, ожидалось (..., {self.n_x})")
        X = x.reshape(-1, self.n_x)
        out = self._forward_cache(X)[-1]
        return out.reshape(x.shape[:-1] + (self.N, self.n_u))

    def backward(self, x: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        MSE по всем N * n_u элементам (и пакету) и ее точный градиент

        Returns:
            (loss, grad) - grad в порядке get_params()
        """
        X = np.asarray(x, dtype=np.float64).reshape(-1, self.n_x)
        T = np.asarray(target, dtype=np.float64).reshape(X.shape[0], -1)
        if T.shape[1] != self.n_u * self.N:
            raise DimensionMismatch(f"Цель формы {np.shape(target)}, ожидалось (..., {self.N}, {self.n_u})")

        acts = self._forward_cache(X)
        diff = acts[-1] - T
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size

        grads_w: List[np.ndarray] = [None] * len(self.weights)
        grads_b: List[np.ndarray] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
                if self.activation == "tanh":
                    delta = delta * (1.0 - acts[i] ** 2)
        grad = np.concatenate([p.reshape(-1) for gw, gb in zip(grads_w, grads_b) for p in (gw, gb)])
        return loss, grad

    def describe(self) -> dict:
        return {"arch": self.arch, "widths": self.widths, "n_u": self.n_u, "N": self.N,
                "activation": self.activation}


class RnnPolicy:
    """
    Последовательная RNN: общая ячейка h_t = tanh(W_x x_t + W_h h_{t-1} + b_h),
    выход u_t = W_y h_t + b_y, h_0 = 0
    """

    arch = "rnn"

    def __init__(self, W_x: np.ndarray, W_h: np.ndarray, b_h: np.ndarray,
                 W_y: np.ndarray, b_y: np.ndarray, N: int):
        self.W_x = np.array(W_x, dtype=np.float64)
        self.W_h = np.array(W_h, dtype=np.float64)
        self.b_h = np.array(b_h, dtype=np.float64)
        self.W_y = np.array(W_y, dtype=np.float64)
        self.b_y = np.array(b_y, dtype=np.float64)
        self.N = int(N)
        n_h = self.W_h.shape[0]
        if (self.W_x.shape[0] != n_h or self.W_h.shape != (n_h, n_h) or self.b_h.shape != (n_h,)
                or self.W_y.shape[1] != n_h or self.b_y.shape != (self.W_y.shape[0],)):
            raise DimensionMismatch("Несогласованные размерности параметров RNN")

    @classmethod
    def initialize(cls, n_x: int, n_h: int, n_u: int, N: int, rng: np.random.Generator) -> "RnnPolicy":
        return cls(
            W_x=_uniform(rng, (n_h, n_x), n_x),
            W_h=_uniform(rng, (n_h, n_h), n_h),
            b_h=_uniform(rng, (n_h,), n_h),
            W_y=_uniform(rng, (n_u, n_h), n_h),
            b_y=_uniform(rng, (n_u,), n_h),
            N=N,
        )

    @property
    def n_x(self) -> int:
        return self.W_x.shape[1]

    @property
    def n_h(self) -> int:
        return self.W_h.shape[0]

    @property
    def n_u(self) -> int:
        return self.W_y.shape[0]

    @property
    def _params(self) -> Tuple[np.ndarray, ...]:
        return self.W_x, self.W_h, self.b_h, self.W_y, self.b_y

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self._params)

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self._params])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.param_count,):
            raise DimensionMismatch(f"Вектор параметров {theta.shape}, ожидалось ({self.param_count},)")
        offset = 0
        for p in self._params:
            p[...] = theta[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def cell(self, x_t: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Один шаг ячейки: (h_t, u_t)"""
        h_next = np.tanh(x_t @ self.W_x.T + h @ self.W_h.T + self.b_h)
        return h_next, h_next @ self.W_y.T + self.b_y

    def _feed(self, X: np.ndarray, feed: Optional[np.ndarray]) -> np.ndarray:
        if feed is None:
            return np.broadcast_to(X[:, None, :], (X.shape[0], self.N, self.n_x))
        feed = np.asarray(feed, dtype=np.float64).reshape(X.shape[0], self.N, self.n_x)
        return feed

    def _unroll(self, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        B = inputs.shape[0]
        H = np.zeros((B, self.N + 1, self.n_h))
        Y = np.empty((B, self.N, self.n_u))
        for t in range(self.N):
            H[:, t + 1], Y[:, t] = self.cell(inputs[:, t], H[:, t])
        return H, Y

    def forward(self, x: np.ndarray, feed: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Развертка на N шагов

        Args:
            x: Состояние (n_x,) или пакет (B, n_x)
            feed: Входы ячейки по шагам (B, N, n_x); по умолчанию на каждом
                шаге подается измеренное состояние x
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_x:
            raise DimensionMismatch(f"Вход RNN формы {x.shape}, ожидалось (..., {self.n_x})")
        X = x.reshape(-1, self.n_x)
        _, Y = self._unroll(self._feed(X, feed))
        return Y.reshape(x.shape[:-1] + (self.N, self.n_u))

    def backward(self, x: np.ndarray, target: np.ndarray,
                 feed: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
        """MSE и градиент BPTT (вклады всех шагов развертки суммируются)"""
        X = np.asarray(x, dtype=np.float64).reshape(-1, self.n_x)
        T = np.asarray(target, dtype=np.float64).reshape(X.shape[0], self.N, -1)
        if T.shape[2] != self.n_u:
            raise DimensionMismatch(f"Цель формы {np.shape(target)}, ожидалось (..., {self.N}, {self.n_u})")

        inputs = self._feed(X, feed)
        H, Y = self._unroll(inputs)
        diff = Y - T
        loss = float(np.mean(diff * diff))
        dY = 2.0 * diff / diff.size

        g_Wx = np.zeros_like(self.W_x)
        g_Wh = np.zeros_like(self.W_h)
        g_bh = np.zeros_like(self.b_h)
        g_Wy = np.einsum("btu,bth->uh", dY, H[:, 1:])
        g_by = dY.sum(axis=(0, 1))
        dh = np.zeros((X.shape[0], self.n_h))
        for t in range(self.N - 1, -1, -1):
            dh = dh + dY[:, t] @ self.W_y
            da = dh * (1.0 - H[:, t + 1] ** 2)
            g_Wx += da.T @ inputs[:, t]
            g_Wh += da.T @ H[:, t]
            g_bh += da.sum(axis=0)
            dh = da @ self.W_h
        grad = np.concatenate([g.reshape(-1) for g in (g_Wx, g_Wh, g_bh, g_Wy, g_by)])
        return loss, grad

    def describe(self) -> dict:
        return {"arch": self.arch, "n_x": self.n_x, "n_h": self.n_h, "n_u": self.n_u, "N": self.N}


def mlp_forward(p: MlpPolicy, x: np.ndarray) -> np.ndarray:
    return p.forward(x)


def rnn_forward(p: RnnPolicy, x: np.ndarray) -> np.ndarray:
    return p.forward(x)


def backward(p, x: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    return p.backward(x, target)


def pack_params(p) -> np.ndarray:
    return p.get_params()


def unpack_params(p, theta: np.ndarray) -> None:
    p.set_params(theta)


def build_network(arch: str, n_x: int, n_u: int, N: int, widths: dict,
                  rng: np.random.Generator):
    """Сеть по имени архитектуры и пресету ширин политики"""
    if arch == "mlp":
        return MlpPolicy.initialize(n_x, list(widths["mlp_hidden"]), n_u, N, rng)
    if arch == "rnn":
        return RnnPolicy.initialize(n_x, int(widths["rnn_hidden"]), n_u, N, rng)
    raise ValueError(f"Неизвестная архитектура: {arch}")
