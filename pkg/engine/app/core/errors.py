"""
错误层级，每一类携带对应的 CLI 退出码
"""


class QFridgeError(Exception):
    """所有引擎错误的基类"""
    exit_code = 1


class ConfigError(QFridgeError):
    """配置错误：未知预设、非法覆盖项、文档结构不合法"""
    exit_code = 2


class ModelError(QFridgeError, ValueError):
    """物理参数不合法"""
    exit_code = 2


class StateError(QFridgeError, ValueError):
    """算符或密度矩阵不满足不变量"""
    exit_code = 3


class PropagationError(QFridgeError):
    """演化失败：步长下溢、容差失败、诊断量越界"""
    exit_code = 3


class SteadyStateError(PropagationError):
    """稳态不唯一或不存在"""

    def __init__(self, message: str, null_dim: int):
        super().__init__(message)
        self.null_dim = null_dim


class RegressionFailure(QFridgeError):
    """回归目标未通过"""
    exit_code = 4
