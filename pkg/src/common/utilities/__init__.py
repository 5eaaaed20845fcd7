"""实用工具模块

提供各种常用的工具函数和类
包括数学计算、日期时间、文件处理、系统信息、参数验证等功能
"""

from .math_utils import MathUtils
from .date_utils import DateUtils
from .file_utils import FileUtils
from .system_utils import SystemUtils
from .validation_utils import ValidationUtils

__all__ = [
    'MathUtils',
    'DateUtils',
    'FileUtils',
    'SystemUtils',
    'ValidationUtils',
]
