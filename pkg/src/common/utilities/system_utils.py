"""系统信息工具模块

提供进程内存、平台信息与并行度上限（PASTN_THREADS）
"""

import os
import platform
import sys
from typing import Dict
import logging

from common.constants import THREADS_ENV

logger = logging.getLogger(__name__)

# 尝试导入 psutil，如果失败则设为 None
try:
    import psutil
except ImportError:
    psutil = None
    logger.warning("psutil 未安装，内存统计将不可用")


class SystemUtils:
    """系统信息工具类"""

    @staticmethod
    def get_platform_info() -> Dict[str, str]:
        """获取平台信息"""
        return {
            'system': platform.system(),
            'machine': platform.machine(),
            'python_version': sys.version.split()[0],
            'cpu_count': str(os.cpu_count() or 1),
        }

    @staticmethod
    def get_process_memory_mb() -> float:
        """当前进程常驻内存（MB），psutil 不可用时返回 -1"""
        if psutil is None:
            return -1.0
        try:
            return psutil.Process(os.getpid()).memory_info().rss / (1024.0 * 1024.0)
        except Exception as e:
            logger.error(f"获取进程内存失败: {str(e)}")
            return -1.0

    @staticmethod
    def get_thread_cap() -> int:
        """评估阶段的并行批次上限，来自环境变量 PASTN_THREADS（默认 1）"""
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            value = int(raw)
        except ValueError:
            logger.warning(f"{THREADS_ENV}={raw!r} 不是整数，使用 1")
            return 1
        return max(1, value)

