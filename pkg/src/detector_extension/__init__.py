"""
Detector Extension

无需重新训练检测器的类别扩展工具包：基于特征质心相似度选择兼容基础类别，
在推理阶段用小型分类器校正检测结果（双并行流水线或按轨迹校正）
"""

__version__ = "1.0.0"
__description__ = "检测器类别扩展工具包"

from .config import Config, RunConfig, get_config

__all__ = ["Config", "RunConfig", "get_config"]
