# pastn_cli.py - PASTN 命令行入口
import os
import sys

# 添加 src 目录到 Python 路径
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from harness.command_manager import get_command_manager


def main(argv=None) -> int:
    """pastn_cli.py <command> [options]

    command 取值: generate-data / train / evaluate / ablate / diagnose
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    manager = get_command_manager()
    if not argv or argv[0] in ("-h", "--help"):
        manager.build_parser().print_help()
        return 0 if argv else 2
    return manager.run(argv[0], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
