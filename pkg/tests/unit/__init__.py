"""单元测试
"""
