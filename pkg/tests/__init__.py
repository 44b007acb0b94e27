"""
dafkit 测试模块
"""
