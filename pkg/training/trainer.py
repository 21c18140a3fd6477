"""
Обучение политик имитацией эксперта
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Mapping, Optional, Tuple

import numpy as np
from tqdm import tqdm

from config import DEFAULTS
from errors import ConfigError, DimensionMismatch, NonFiniteLoss
from feasibility.check import rollout
from models.benchmarks import BenchmarkModel
from policy.networks import build_network
from policy.normalized import NeuralPolicy, Normalizer
from training.dataset import Dataset, split
from training.optim import Adam, EarlyStopping, cosine_lr
from utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)


class StopReason(str, Enum):
    EARLY_STOP = "EarlyStop"
    MAX_EPOCHS = "MaxEpochs"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 2000
    patience: int = 100
    val_fraction: float = 0.1
    seed: int = 0
    lr_min: float = 1e-5
    cosine: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience должен быть >= 1, получено {self.patience}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"Доля валидации должна быть в (0, 1), получено {self.val_fraction}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size и max_epochs должны быть положительными")

    @classmethod
    def from_settings(cls, settings: Optional[Mapping[str, Any]], seed: int) -> "TrainConfig":
        s = dict(DEFAULTS["train"], **(settings or {}))
        return cls(
            lr=float(s["lr"]),
            batch_size=int(s["batch_size"]),
            max_epochs=int(s["max_epochs"]),
            patience=int(s["patience"]),
            val_fraction=float(s["val_fraction"]),
            seed=int(seed),
            lr_min=float(s["lr_min"]),
            cosine=bool(s["cosine"]),
            log_every=int(s["log_every"]),
        )


@dataclass
class TrainReport:
    epochs_run: int
    best_val_loss: float
    best_epoch: int
    stop_reason: StopReason
    train_curve: List[float] = field(default_factory=list)
    val_curve: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_val_loss": self.best_val_loss,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason.value,
        }


def init_policy(arch: str, model: BenchmarkModel, ds: Dataset, widths: Mapping[str, Any],
                seed: int, feed: str = "measured") -> NeuralPolicy:
    """Новая политика с нормировкой из манифеста датасета"""
    net = build_network(arch, model.n_x, model.n_u, model.N, widths, rng_for(seed, Stream.INIT))
    if "normalization" in ds.manifest:
        normalizer = Normalizer.from_dict(ds.manifest["normalization"])
    else:
        normalizer = Normalizer.fit(ds.inputs, model)
    return NeuralPolicy(net, normalizer, model=model if feed == "rollout" else None, feed=feed)


class _Batches:
    """Нормированные входы, цели и (для feed='rollout') состояния подачи"""

    def __init__(self, policy: NeuralPolicy, ds: Dataset):
        norm = policy.normalizer
        self.X = norm.normalize_x(ds.inputs)
        self.T = norm.normalize_u(ds.target_seqs)
        self.F = None
        if policy.feed == "rollout":
            # подача эксперта: номинальные состояния под целевыми входами
            states = rollout(policy.model, ds.inputs, ds.target_seqs)[:, :-1]
            self.F = norm.normalize_x(states)

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx: np.ndarray):
        return self.X[idx], self.T[idx], None if self.F is None else self.F[idx]


def _loss_grad(net, X: np.ndarray, T: np.ndarray, F: Optional[np.ndarray]) -> Tuple[float, np.ndarray]:
    if F is None:
        return net.backward(X, T)
    return net.backward(X, T, F)


def _loss(net, X: np.ndarray, T: np.ndarray, F: Optional[np.ndarray]) -> float:
    Y = net.forward(X) if F is None else net.forward(X, F)
    return float(np.mean((Y - T) ** 2))


def train(policy: NeuralPolicy, ds: Dataset, cfg: TrainConfig,
          val_ds: Optional[Dataset] = None, progress: bool = False) -> Tuple[NeuralPolicy, TrainReport]:
    """
    Обучение Adam по мини-батчам с ранней остановкой

    Ошибки считаются в нормированных единицах входа. Возвращается
    политика с параметрами лучшей по валидации эпохи.

    Args:
        policy: Политика (изменяется на месте)
        ds: Обучающие данные; если val_ds не задан, валидация отделяется от ds
        cfg: Параметры обучения
        val_ds: Готовая валидационная часть
        progress: Показывать tqdm

    Raises:
        DimensionMismatch: Датасет не соответствует политике
        NonFiniteLoss: Ошибка или градиент стали неконечными
    """
    if ds.n_x != policy.n_x or ds.N != policy.N or ds.n_u != policy.n_u:
        raise DimensionMismatch(
            f"Датасет (n_x={ds.n_x}, N={ds.N}, n_u={ds.n_u}) не подходит политике "
            f"(n_x={policy.n_x}, N={policy.N}, n_u={policy.n_u})"
        )
    if val_ds is None:
        ds, val_ds = split(ds, cfg.val_fraction, cfg.seed)

    net = policy.net
    train_data = _Batches(policy, ds)
    val_data = _Batches(policy, val_ds)
    val_all = val_data.take(np.arange(len(val_data)))

    theta = net.get_params()
    adam = Adam(theta.size, lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best_theta = theta.copy()
    train_curve: List[float] = []
    val_curve: List[float] = []
    stop_reason = StopReason.MAX_EPOCHS

    logger.info(
        f"Обучение {net.arch}: {net.param_count} параметров, train={len(ds)}, val={len(val_ds)}, "
        f"lr={cfg.lr}, batch={cfg.batch_size}, max_epochs={cfg.max_epochs}, patience={cfg.patience}"
    )
    epochs = tqdm(range(cfg.max_epochs), desc=f"Обучение {net.arch}", disable=not progress)
    for epoch in epochs:
        adam.lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr, cfg.lr_min) if cfg.cosine else cfg.lr
        perm = rng_for(cfg.seed, Stream.SHUFFLE, epoch).permutation(len(train_data))

        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grad = _loss_grad(net, *train_data.take(idx))
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(
                    f"Неконечная ошибка на эпохе {epoch}, батч с {start}: loss={loss}, "
                    f"|grad|max={float(np.nanmax(np.abs(grad)))}"
                )
            theta = adam.step(theta, grad)
            net.set_params(theta)
            total += loss * idx.size

        train_curve.append(total / len(perm))
        val_loss = _loss(net, *val_all)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"Неконечная ошибка валидации на эпохе {epoch}")
        val_curve.append(val_loss)

        if stopper.update(epoch, val_loss):
            best_theta = theta.copy()
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            logger.info(
                f"Эпоха {epoch + 1}: train={train_curve[-1]:.3e}, val={val_loss:.3e}, "
                f"лучшая={stopper.best:.3e} (эпоха {stopper.best_epoch + 1})"
            )
        if stopper.should_stop:
            stop_reason = StopReason.EARLY_STOP
            break
    epochs.close()

    net.set_params(best_theta)
    report = TrainReport(
        epochs_run=len(val_curve),
        best_val_loss=stopper.best,
        best_epoch=stopper.best_epoch,
        stop_reason=stop_reason,
        train_curve=train_curve,
        val_curve=val_curve,
    )
    logger.info(
        f"Обучение завершено ({stop_reason.value}): эпох {report.epochs_run}, "
        f"лучшая валидация {report.best_val_loss:.3e} на эпохе {report.best_epoch + 1}"
    )
    return policy, report
