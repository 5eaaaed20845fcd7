"""命令行编排

RunConfig 合并配置，CommandManager 发现并执行 commands 中的子命令
"""
