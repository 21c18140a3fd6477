import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from errors import ArtifactCorrupted
from models.benchmarks import BenchmarkModel
from policy.networks import MlpPolicy, RnnPolicy
from policy.normalized import NeuralPolicy, Normalizer
from utils.artifacts import read_matrix, write_matrix

logger = logging.getLogger(__name__)


def _skeleton(descriptor: Mapping[str, Any]):
    """Сеть нужной формы с нулевыми параметрами"""
    arch = descriptor.get("arch")
    if arch == "mlp":
        widths = [int(w) for w in descriptor["widths"]]
        weights = [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])]
        biases = [np.zeros(o) for o in widths[1:]]
        return MlpPolicy(weights, biases, int(descriptor["n_u"]), int(descriptor["N"]),
                         descriptor.get("activation", "tanh"))
    if arch == "rnn":
        n_x, n_h, n_u = int(descriptor["n_x"]), int(descriptor["n_h"]), int(descriptor["n_u"])
        return RnnPolicy(np.zeros((n_h, n_x)), np.zeros((n_h, n_h)), np.zeros(n_h),
                         np.zeros((n_u, n_h)), np.zeros(n_u), int(descriptor["N"]))
    raise ArtifactCorrupted(f"Неизвестная архитектура в чекпоинте: {arch}")


def save_checkpoint(path: Union[str, Path], policy: NeuralPolicy,
                    meta: Optional[Mapping[str, Any]] = None) -> str:
    """
    Сохранить вектор параметров с заголовком

    Args:
        path: Путь к файлу
        policy: Политика
        meta: Метаданные обучения (зерно, родительские суммы, конфигурация)

    Returns:
        sha256 вектора параметров
    """
    header = {
        "kind": "checkpoint",
        "network": policy.net.describe(),
        "feed": policy.feed,
        "normalizer": policy.normalizer.to_dict(),
        "meta": dict(meta or {}),
    }
    checksum = write_matrix(path, policy.net.get_params(), header)
    logger.info(f"Чекпоинт {policy.net.arch} сохранен: {path} ({policy.net.param_count} параметров)")
    return checksum


def load_checkpoint(path: Union[str, Path],
                    model: Optional[BenchmarkModel] = None) -> Tuple[NeuralPolicy, Dict[str, Any]]:
    """
    Загрузить политику из чекпоинта

    Returns:
        (политика, заголовок)

    Raises:
        ArtifactCorrupted: Файл поврежден или не является чекпоинтом
    """
    theta, header = read_matrix(path)
    if header.get("kind") != "checkpoint":
        raise ArtifactCorrupted(f"{path}: не чекпоинт политики")
    net = _skeleton(header["network"])
    net.set_params(theta)
    policy = NeuralPolicy(net, Normalizer.from_dict(header["normalizer"]), model=model,
                          feed=header.get("feed", "measured"))
    return policy, header
