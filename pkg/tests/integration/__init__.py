"""集成测试
"""
