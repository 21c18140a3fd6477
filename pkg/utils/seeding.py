"""
Разбиение корневого зерна на независимые потоки

Каждый генератор строится как default_rng(SeedSequence([seed, stream, *keys])),
поэтому порядок вызовов и число воркеров не влияют на результат.
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    SAMPLER = 1
    SPLIT = 2
    INIT = 3
    SHUFFLE = 4
    EVAL = 5
    DISTURBANCE = 6
    POLICY_PROBE = 7


def rng_for(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    entropy = [int(seed), int(stream)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
