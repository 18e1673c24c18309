"""统一的异常类型，CLI 根据类型决定退出码。"""


class LayerSimError(Exception):
    """所有模拟器错误的基类"""


class InvalidGeometryError(LayerSimError, ValueError):
    pass


class SingularityError(LayerSimError, ValueError):
    pass


class ConfigurationError(LayerSimError, ValueError):
    pass


class CapacityError(LayerSimError):
    """问题规模超过配置的上限

    Args:
        message: 错误描述
        size: 计算得到的规模（基大小或希尔伯特空间维数）
        limit: 配置的上限
    """

    def __init__(self, message: str, size: int, limit: int):
        super().__init__(message)
        self.size = size
        self.limit = limit


class StepSizeError(LayerSimError, ValueError):
    pass


class QueryError(LayerSimError, KeyError):
    def __str__(self):
        # KeyError 默认会给消息加引号
        return str(self.args[0]) if self.args else ""


class InfeasibleCoefficientsError(LayerSimError, ValueError):
    pass


class ReadoutError(LayerSimError, ValueError):
    pass


class FitError(LayerSimError, RuntimeError):
    def __init__(self, message: str, best_residual: float = float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class DomainError(LayerSimError, ValueError):
    pass


class InsufficientDataError(LayerSimError, ValueError):
    pass


class UndefinedFractionError(LayerSimError, ValueError):
    pass


class CacheIntegrityError(LayerSimError):
    pass


class HyperfineValidityWarning(UserWarning):
    """点偶极近似在 |r| < 2a₀ 时不再可靠"""
