"""项目自定义异常

定义项目中使用的各种自定义异常类型
"""


class PastnError(Exception):
    """基础异常类"""
    pass


class DimensionError(PastnError, ValueError):
    """形状不匹配或无法广播"""
    pass


class LengthError(PastnError, ValueError):
    """序列长度小于感受野"""
    pass


class ContractError(PastnError, RuntimeError):
    """接口使用错误（如对非标量调用 backward）"""
    pass


class ConfigurationError(PastnError):
    """配置错误"""
    pass


class NodeIndexError(PastnError, IndexError):
    """节点编号越界"""
    pass


class InvalidValueError(PastnError, ValueError):
    """数值不合法（如非正距离）"""
    pass


class DataFormatError(PastnError):
    """数据文件格式错误"""

    def __init__(self, message: str, row: int = None):
        if row is not None:
            message = f"第 {row} 行: {message}"
        super().__init__(message)
        self.row = row


class DataError(PastnError):
    """数据量不足等数据错误"""
    pass


class DivergenceError(PastnError):
    """训练发散（损失非有限）"""

    def __init__(self, batch_index: int, value: float):
        super().__init__(f"损失非有限 (batch={batch_index}, loss={value})")
        self.batch_index = batch_index
        self.value = value


class CheckpointError(PastnError):
    """检查点读写错误"""
    pass
