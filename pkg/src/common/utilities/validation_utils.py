"""验证工具模块

提供配置值、比例、枚举等的检查功能
"""

import math
from typing import Any, Iterable, Sequence

from common.exceptions import ConfigurationError


class ValidationUtils:
    """验证工具类"""

    @staticmethod
    def require_positive_int(name: str, value: Any) -> int:
        """检查正整数"""
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigurationError(f"{name} 必须为正整数，得到 {value!r}")
        return value

    @staticmethod
    def require_choice(name: str, value: Any, choices: Iterable[Any]) -> Any:
        """检查取值是否在允许集合内"""
        choices = list(choices)
        if value not in choices:
            raise ConfigurationError(f"{name} 必须是 {choices} 之一，得到 {value!r}")
        return value

    @staticmethod
    def require_probability(name: str, value: float, allow_one: bool = False) -> float:
        """检查概率值 [0, 1)"""
        upper_ok = value <= 1.0 if allow_one else value < 1.0
        if not (0.0 <= value and upper_ok):
            raise ConfigurationError(f"{name} 必须在 [0, 1) 之间，得到 {value!r}")
        return float(value)

    @staticmethod
    def require_ratios(ratios: Sequence[float], count: int = 3) -> tuple:
        """检查切分比例：个数正确、非负、和为 1"""
        if len(ratios) != count:
            raise ConfigurationError(f"需要 {count} 个比例，得到 {len(ratios)} 个")
        if any(r < 0 for r in ratios):
            raise ConfigurationError(f"比例不能为负: {ratios}")
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"比例之和必须为 1，得到 {sum(ratios)}")
        return tuple(float(r) for r in ratios)
