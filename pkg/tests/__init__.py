"""
测试包

检测器类别扩展工具包的测试模块
"""
