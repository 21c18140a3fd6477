import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import ArtifactCorrupted, ConfigError, DimensionMismatch, EmptySplit
from utils.artifacts import read_matrix, read_yaml, sha256_bytes, write_matrix, write_yaml
from utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)

INPUTS_FILE = "inputs.bin"
TARGETS_FILE = "targets.bin"
MANIFEST_FILE = "manifest.yaml"


@dataclass
class Dataset:
    """
    Пары (x, u*_0:N-1) эксперта

    inputs - (M, n_x), targets - (M, N * n_u) построчно по шагам горизонта.
    """

    inputs: np.ndarray
    targets: np.ndarray
    N: int
    n_u: int
    manifest: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.shape != (self.inputs.shape[0], self.N * self.n_u):
            raise DimensionMismatch(
                f"Датасет: inputs {self.inputs.shape}, targets {self.targets.shape}, N={self.N}, n_u={self.n_u}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_x(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_seqs(self) -> np.ndarray:
        """Цели в форме (M, N, n_u)"""
        return self.targets.reshape(-1, self.N, self.n_u)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.N, self.n_u, dict(self.manifest))


def split(ds: Dataset, fraction: float, seed: int,
          test_fraction: Optional[float] = None) -> Tuple[Dataset, ...]:
    """
    Разбиение по зафиксированной перестановке

    Args:
        ds: Датасет
        fraction: Доля валидации
        seed: Зерно перестановки
        test_fraction: Если задана, дополнительно отделяется тестовая часть

    Returns:
        (train, val) или (train, val, test); внутри частей исходный порядок строк

    Raises:
        EmptySplit: Одна из частей пуста
    """
    fractions = [fraction] + ([test_fraction] if test_fraction is not None else [])
    for f in fractions:
        if not 0.0 < f < 1.0:
            raise ConfigError(f"Доля разбиения должна быть в (0, 1), получено {f}")

    M = len(ds)
    perm = rng_for(seed, Stream.SPLIT).permutation(M)
    n_val = int(round(M * fraction))
    n_test = int(round(M * test_fraction)) if test_fraction is not None else 0
    n_train = M - n_val - n_test
    if n_val == 0 or n_train <= 0 or (test_fraction is not None and n_test == 0):
        raise EmptySplit(f"Пустая часть разбиения: M={M}, train={n_train}, val={n_val}, test={n_test}")

    test_idx = np.sort(perm[:n_test])
    val_idx = np.sort(perm[n_test:n_test + n_val])
    train_idx = np.sort(perm[n_test + n_val:])
    parts = [ds.subset(train_idx), ds.subset(val_idx)]
    if test_fraction is not None:
        parts.append(ds.subset(test_idx))
    return tuple(parts)


def save_dataset(directory: Union[str, Path], ds: Dataset) -> str:
    """
    Записать датасет: две бинарные матрицы и манифест

    Returns:
        sha256 манифеста (идентификатор датасета в родословной)
    """
    directory = Path(directory)
    inputs_sha = write_matrix(directory / INPUTS_FILE, ds.inputs, {"kind": "dataset.inputs"})
    targets_sha = write_matrix(directory / TARGETS_FILE, ds.targets, {"kind": "dataset.targets"})
    manifest = dict(ds.manifest)
    manifest.update({
        "rows": len(ds),
        "n_x": ds.n_x,
        "n_u": ds.n_u,
        "N": ds.N,
        "files": {INPUTS_FILE: inputs_sha, TARGETS_FILE: targets_sha},
    })
    checksum = write_yaml(directory / MANIFEST_FILE, manifest)
    logger.info(f"Датасет сохранен в {directory}: {len(ds)} строк")
    return checksum


def load_dataset(directory: Union[str, Path]) -> Tuple[Dataset, str]:
    """
    Прочитать датасет и проверить контрольные суммы файлов

    Returns:
        (датасет, sha256 манифеста)
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise ArtifactCorrupted(f"Нет манифеста датасета: {manifest_path}")
    manifest = read_yaml(manifest_path)
    inputs, inputs_header = read_matrix(directory / INPUTS_FILE)
    targets, targets_header = read_matrix(directory / TARGETS_FILE)
    files = manifest.get("files", {})
    if files.get(INPUTS_FILE) != inputs_header["sha256"] or files.get(TARGETS_FILE) != targets_header["sha256"]:
        raise ArtifactCorrupted(f"{directory}: файлы датасета не соответствуют манифесту")

    checksum = sha256_bytes(manifest_path.read_bytes())
    ds = Dataset(inputs, targets, int(manifest["N"]), int(manifest["n_u"]), manifest)
    return ds, checksum
