import copy
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from errors import ConfigError

# Загружаем переменные окружения
load_dotenv()

ENV_PREFIX = "SAMPC_"


def _env(name: str, default: Optional[str] = None) -> Optional[str]:
    return os.getenv(f"{ENV_PREFIX}{name}", default)


class Config:
    """Настройки окружения (переменные с префиксом SAMPC_)"""

    # Путь к YAML-конфигурации запуска (может отсутствовать)
    CONFIG_PATH = _env("CONFIG")

    # Корневое зерно случайности
    SEED = int(_env("SEED", "0"))

    # Ограничение числа процессов-воркеров
    JOBS = int(_env("JOBS", "1"))

    # Каталог для артефактов
    OUT_DIR = _env("OUT", "runs")

    # Логирование
    LOG_LEVEL = _env("LOG_LEVEL", "INFO")
    LOG_FILE = "sampc.log"

    # Прогресс-бары tqdm
    PROGRESS = _env("PROGRESS", "1") not in ("0", "false", "False", "")

    # Реестр артефактов и журнал решений
    REGISTRY_NAME = "registry.db"


BENCHMARK_NAMES = ("quadcopter", "kinematic", "dynamic")

# Значения по умолчанию
DEFAULTS: Dict[str, Any] = {
    "benchmarks": {
        "quadcopter": {
            "T_s": 0.1,
            "N": 10,
            "substeps": 10,
            "d0": 80.0,
            "d1": 8.0,
            "n0": 40.0,
            "k_T": 0.91,
            "m": 1.3,
            "g": 9.81,
            "phi_max": math.pi / 9,
            "u_tilt_max": math.pi / 4,
            "u_thrust_max_g": 2.0,
            "Q": [20.0, 1.0, 3.0, 1.0, 3.0, 0.01, 1.0, 4.0, 1.0, 4.0],
            "R": [8.0, 8.0, 0.8],
            "alpha_max": 1.0e4,  # перекрывает terminal.alpha_max
        },
        "kinematic": {
            "T_s": 0.01,
            "N": 40,
            "Q": [10.0, 10.0, 0.2, 5.0],
            "R": [2.0, 4.0],
            "delta_max_deg": 25.0,
            "a_min": -6.0,
            "a_max": 3.2,
            "v_max": 15.0,
            "p_min": -5.0,
            "p_max": 55.0,
            "v_ref": 1.0,
            "lane_y": 0.0,
            "obstacles": {"centers": [[3.0, 2.5], [8.0, -2.5]], "r_safe": 1.0},
            "alpha_max": 1.0e4,  # перекрывает terminal.alpha_max
        },
        "dynamic": {
            "T_s": 0.01,
            "N": 40,
            "substeps": 8,
            "Q": [10.0, 10.0, 0.5, 0.5, 0.2, 5.0, 1.0, 5.0],
            "R": [2.0, 4.0],
            "l_f": 1.35,
            "l_r": 1.21,
            "C_f": 1.5e5,
            "C_r": 1.5e5,
            "mass": 1500.0,
            "I_z": 2500.0,
            "tau_a": 0.2,
            "v_min": 0.5,
            "v_floor": 1.0,
            "delta_max_deg": 25.0,
            "delta_dot_max": 1.0,
            "a_min": -6.0,
            "a_max": 3.2,
            "v_max": 15.0,
            "p_min": -5.0,
            "p_max": 55.0,
            "v_ref": 2.0,
            "lane_y": 0.0,
            "obstacles": {"centers": [[4.0, 2.5], [9.0, -2.5]], "r_safe": 1.0},
            "alpha_max": 1.0e4,  # перекрывает terminal.alpha_max
        },
    },
    "terminal": {
        "cost_inflation": 1.2,
        "alpha_max": 10.0,
        "epsilon": 0.0,
        "bisection_iters": 60,
        "boundary_samples": 512,
        "invariance_samples": 1000,
        "shrink_factor": 0.7,
        "max_shrinks": 40,
        "decrease_tol": 1e-6,
        "dare_tol": 1e-10,
        "dare_max_iter": 100000,
        "separate_tube_gain": False,
        "tube_q_scale": 1.0,
    },
    "solver": {
        "max_iter": 200,
        "kkt_tol": 1e-6,
        "viol_tol": 1e-6,
        "penalty_schedule": [10.0, 100.0, 1000.0, 10000.0],
        "backoff": 1e-6,
        "fd_step": 1e-6,
        "armijo": 1e-4,
        "max_backtracks": 30,
        "osqp_eps": 1e-9,
        "osqp_max_iter": 20000,
        "regularization": 1e-10,
    },
    "feasibility": {
        "slack": 1e-9,
    },
    "sampler": {
        "quadcopter": {"pos": 2.0, "vel": 1.0, "attitude_frac": 0.8, "omega": 1.0},
        "kinematic": {"p_x0": 0.0, "gamma_p": 0.5, "gamma_psi_deg": 10.0, "gamma_v": 0.5},
        "dynamic": {"p_x0": 0.0, "gamma_p": 0.5, "gamma_psi_deg": 10.0, "gamma_v": 0.5},
    },
    "dataset": {
        "preset": "desk",
        "sizes": {
            "desk": {"quadcopter": 20000, "kinematic": 5000, "dynamic": 10000},
            "full": {"quadcopter": 9600000, "kinematic": 55000, "dynamic": 116000},
        },
        "probe": 2000,
        "min_acceptance": 1e-3,
        "validation_tol": 1e-6,
        "chunk": 64,
    },
    "policy": {
        "preset": "desk",
        "widths": {
            "desk": {"mlp_hidden": [256, 256], "rnn_hidden": 256},
            "full": {"mlp_hidden": [1000, 1000], "rnn_hidden": 256},
        },
        "rnn_feed": "measured",
    },
    "train": {
        "lr": 1e-3,
        "lr_min": 1e-5,
        "cosine": True,
        "batch_size": 256,
        "max_epochs": 2000,
        "patience": 100,
        "val_fraction": 0.1,
        "test_fraction": 0.1,
        "log_every": 50,
    },
    "eval": {
        "n_rollouts": 100,
        "n_open_loop": 1000,
        "steps": {"quadcopter": 100, "kinematic": 470, "dynamic": 470},
        "epsilon": 0.0,
        "epsilon_sweep": [],
        "scaling_fractions": [1.0, 0.25, 0.1],
        "comparison_seeds": [0, 1, 2],
    },
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Рекурсивно наложить override на копию base"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass
class RunConfig:
    """Полная конфигурация запуска; сериализуется в каждый артефакт"""

    benchmark: str
    seed: int = 0
    jobs: int = 1
    out_dir: Path = Path("runs")
    settings: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_NAMES:
            raise ConfigError(
                f"Неизвестный бенчмарк '{self.benchmark}', допустимо: {', '.join(BENCHMARK_NAMES)}"
            )
        if self.jobs < 1:
            raise ConfigError(f"jobs должен быть >= 1, получено {self.jobs}")
        self.out_dir = Path(self.out_dir)

    def section(self, name: str) -> Dict[str, Any]:
        return self.settings[name]

    @property
    def model_settings(self) -> Dict[str, Any]:
        return self.settings["benchmarks"][self.benchmark]

    @property
    def sampler_settings(self) -> Dict[str, Any]:
        return self.settings["sampler"][self.benchmark]

    @property
    def dataset_size(self) -> int:
        ds = self.settings["dataset"]
        return int(ds["sizes"][ds["preset"]][self.benchmark])

    @property
    def policy_widths(self) -> Dict[str, Any]:
        pol = self.settings["policy"]
        return pol["widths"][pol["preset"]]

    @property
    def eval_steps(self) -> int:
        return int(self.settings["eval"]["steps"][self.benchmark])

    def to_dict(self) -> Dict[str, Any]:
        # out_dir и jobs не влияют на содержимое артефактов
        return {"benchmark": self.benchmark, "seed": self.seed, "settings": self.settings}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def load_run_config(
    benchmark: str,
    path: Optional[str] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    out_dir: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Собрать RunConfig: значения по умолчанию <- YAML-файл <- переопределения

    Args:
        benchmark: Имя бенчмарка
        path: Путь к YAML (если None, берется Config.CONFIG_PATH)
        seed: Корневое зерно (если None, Config.SEED)
        jobs: Число воркеров (если None, Config.JOBS)
        out_dir: Каталог артефактов (если None, Config.OUT_DIR)
        overrides: Дополнительный словарь поверх файла

    Returns:
        Готовая конфигурация запуска
    """
    settings = copy.deepcopy(DEFAULTS)
    path = path or Config.CONFIG_PATH
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                from_file = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Не удалось прочитать конфигурацию {path}: {e}") from e
        if not isinstance(from_file, dict):
            raise ConfigError(f"Конфигурация {path} должна быть словарем верхнего уровня")
        settings = deep_merge(settings, from_file)
    if overrides:
        settings = deep_merge(settings, overrides)

    return RunConfig(
        benchmark=benchmark,
        seed=Config.SEED if seed is None else int(seed),
        jobs=Config.JOBS if jobs is None else int(jobs),
        out_dir=Path(out_dir or Config.OUT_DIR),
        settings=settings,
    )
