"""Исключения лаборатории и коды выхода CLI"""


class SampcError(Exception):
    """Базовое исключение; exit_code используется точкой входа"""

    exit_code = 1


class ConfigError(SampcError):
    exit_code = 2


class DimensionMismatch(SampcError, ValueError):
    exit_code = 2


class NonFiniteState(SampcError, ArithmeticError):
    pass


class LowSpeedSingularity(NonFiniteState):
    """Линейная шинная модель не определена при v <= v_min_dyn"""


class NotAnEquilibrium(SampcError):
    pass


class NoConvergence(SampcError):
    pass


class EmptyTerminalSet(SampcError):
    pass


class SamplerExhausted(SampcError):
    exit_code = 3


class NonFiniteLoss(SampcError):
    exit_code = 4


class EmptySplit(SampcError):
    exit_code = 2


class EmptyTestSet(SampcError):
    exit_code = 2


class CandidateInfeasible(SampcError):
    pass


class LineageMismatch(SampcError):
    exit_code = 5


class ArtifactCorrupted(SampcError):
    exit_code = 5
