"""日志模块

提供 PASTN 的日志记录功能
"""

import logging
import os
from typing import Optional

from common.constants import LOG_FORMAT, DEFAULT_LOG_DIR, DEFAULT_LOG_LEVEL, DEFAULT_LOG_FILE


class Logger:
    """日志记录器"""

    _instance: Optional[logging.Logger] = None
    _handlers: list = []

    @classmethod
    def get_logger(cls, name: str = "PASTN") -> logging.Logger:
        """获取日志记录器（单例模式）"""
        if cls._instance is None:
            cls._instance = cls.setup(name=name)
        return cls._instance

    @classmethod
    def setup(
        cls,
        name: str = "PASTN",
        level: str = DEFAULT_LOG_LEVEL,
        log_dir: Optional[str] = None,
        log_file: str = DEFAULT_LOG_FILE,
        fmt: str = LOG_FORMAT,
    ) -> logging.Logger:
        """设置日志记录器

        处理器挂在根记录器上，各模块的 logging.getLogger(__name__) 会向上传播。
        重复调用时先移除上一次安装的处理器。
        """
        root = logging.getLogger()
        for handler in cls._handlers:
            root.removeHandler(handler)
            handler.close()
        cls._handlers = []

        numeric_level = getattr(logging, str(level).upper(), logging.INFO)
        root.setLevel(numeric_level)

        # 创建日志目录（如果不存在）
        log_dir = log_dir or DEFAULT_LOG_DIR
        os.makedirs(log_dir, exist_ok=True)

        # 文件处理器
        file_handler = logging.FileHandler(os.path.join(log_dir, log_file), encoding="utf-8")
        file_handler.setLevel(numeric_level)

        # 控制台处理器
        console_handler = logging.StreamHandler()
        console_handler.setLevel(numeric_level)

        formatter = logging.Formatter(fmt)
        file_handler.setFormatter(formatter)
        console_handler.setFormatter(formatter)

        root.addHandler(file_handler)
        root.addHandler(console_handler)
        cls._handlers = [file_handler, console_handler]

        cls._instance = logging.getLogger(name)
        return cls._instance

    @classmethod
    def info(cls, message: str):
        """记录信息级别日志"""
        cls.get_logger().info(message)

    @classmethod
    def warning(cls, message: str):
        """记录警告级别日志"""
        cls.get_logger().warning(message)

    @classmethod
    def error(cls, message: str):
        """记录错误级别日志"""
        cls.get_logger().error(message)

    @classmethod
    def debug(cls, message: str):
        """记录调试级别日志"""
        cls.get_logger().debug(message)
