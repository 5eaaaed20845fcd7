"""测试模块
"""
