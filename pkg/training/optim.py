import logging
import math

import numpy as np

logger = logging.getLogger(__name__)


class Adam:
    """Adam по плоскому вектору параметров"""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Вернуть обновленные параметры (theta не изменяется)"""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(epoch: int, max_epochs: int, lr: float, lr_min: float) -> float:
    """Косинусное затухание от lr (эпоха 0) до lr_min (последняя эпоха)"""
    if max_epochs <= 1:
        return lr
    progress = min(epoch / (max_epochs - 1), 1.0)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))


class EarlyStopping:
    """
    Остановка после patience эпох без строгого улучшения валидационной ошибки
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """
        Учесть ошибку эпохи

        Returns:
            True, если значение стало новым лучшим
        """
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience
