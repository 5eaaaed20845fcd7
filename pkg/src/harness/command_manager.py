"""命令管理器

负责统一管理所有子命令，提供自动发现、注册、执行等功能
解耦命令行入口和具体命令的实现

使用示例:
    from harness.command_manager import get_command_manager

    manager = get_command_manager()
    exit_code = manager.run("generate-data", ["--nodes", "20", "--days", "30", "--out", "data"])
"""

import argparse
import logging
import inspect
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from common.constants import DEFAULT_LOG_DIR, DEFAULT_LOG_FILE, DEFAULT_LOG_LEVEL, LOG_FORMAT
from common.exceptions import PastnError
from common.logs import Logger
from config import Config

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


@dataclass
class CommandSpec:
    """一个子命令：名称、说明、参数声明和处理函数"""

    name: str
    help: str
    handler: Callable[[argparse.Namespace], int]
    arguments: List[Argument] = field(default_factory=list)


def command(name: str, help: str, arguments: Optional[List[Argument]] = None):
    """把函数声明为子命令"""

    def decorator(fn):
        fn.command_spec = CommandSpec(name=name, help=help, handler=fn, arguments=list(arguments or []))
        return fn

    return decorator


def arg(*flags: str, **kwargs) -> Argument:
    return flags, kwargs


def resolve_log_dir(namespace: argparse.Namespace) -> str:
    """日志目录：--log-dir 优先，其次是命令的 --out，最后是 logs/"""
    return namespace.log_dir or getattr(namespace, "out", None) or DEFAULT_LOG_DIR


class CommandManager:
    """命令管理器 - 统一管理所有子命令的发现、注册和执行"""

    _instance = None
    _initialized = False

    def __new__(cls):
        """单例模式"""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """初始化命令管理器（只执行一次）"""
        if self._initialized:
            return

        self.logger = logging.getLogger(__name__)
        self.commands: Dict[str, CommandSpec] = {}
        self._discover_commands()
        self._initialized = True

    def _discover_commands(self):
        """自动发现并注册所有命令"""
        from harness import commands

        self._scan_module(commands, "harness.commands")
        self.logger.debug(f"Discovered {len(self.commands)} commands: {list(self.commands)}")

    def _scan_module(self, module, module_name: str):
        """扫描模块中带 command_spec 的函数"""
        for _, obj in inspect.getmembers(module, inspect.isfunction):
            spec = getattr(obj, "command_spec", None)
            if isinstance(spec, CommandSpec):
                self.commands[spec.name] = spec
                self.logger.debug(f"Registered command: {spec.name} from {module_name}")

    def get_command_names(self) -> List[str]:
        return sorted(self.commands)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="pastn", description="PASTN 交通流量预测")
        subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
        subparsers.required = True
        for name in self.get_command_names():
            spec = self.commands[name]
            sub = subparsers.add_parser(name, help=spec.help, description=spec.help)
            for flags, kwargs in spec.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.add_argument("--log-level", default=None, help="日志级别（默认取 config.json 的 logging.level）")
            sub.add_argument("--log-dir", default=None, help="日志目录（默认为 --out，没有 --out 时为 logs/）")
        return parser

    def run(self, command_name: str, args: Sequence[str] = ()) -> int:
        """执行子命令

        Returns:
            0 成功；2 用法错误（未知命令/参数）；1 运行失败
        """
        parser = self.build_parser()
        try:
            namespace = parser.parse_args([command_name, *args])
        except SystemExit as e:
            return 2 if e.code not in (0, None) else 0

        logging_config = Config.get_instance().get_logging_config()
        Logger.setup(
            level=namespace.log_level or logging_config.get("level", DEFAULT_LOG_LEVEL),
            log_dir=resolve_log_dir(namespace),
            log_file=logging_config.get("file", DEFAULT_LOG_FILE),
            fmt=logging_config.get("format", LOG_FORMAT),
        )
        spec = self.commands[namespace.command]
        try:
            Logger.info(f"Executing command: {spec.name} with args: {list(args)}")
            code = spec.handler(namespace)
            Logger.info(f"Command '{spec.name}' finished")
            return int(code or 0)
        except PastnError as e:
            self.logger.error(f"命令 '{spec.name}' 执行失败: {e}")
            print(f"错误: {e}", file=sys.stderr)
            return 1
        except Exception as e:
            self.logger.error(f"命令 '{spec.name}' 执行失败: {e}", exc_info=True)
            print(f"错误: {type(e).__name__}: {e}", file=sys.stderr)
            return 1

    @classmethod
    def get_instance(cls):
        """获取命令管理器实例（单例）"""
        return cls()


def get_command_manager() -> CommandManager:
    """获取命令管理器实例的便捷函数"""
    return CommandManager.get_instance()
