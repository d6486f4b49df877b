"""
配置管理模块

负责加载和管理所有配置参数：默认值 -> YAML配置文件 -> 环境变量
"""

import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv


METRIC_CHOICES = ("cosine", "l1", "l2", "squared_l2")
SIMILARITY_MODES = ("centroid", "average_pairwise")
RUN_MODES = ("dual_parallel", "sequential", "tracked")
LOG_FORMATS = ("simple", "detailed", "structured")


@dataclass
class SimilarityConfig:
    """相似度与兼容类别选择配置"""
    # 经验值，可按数据集调整
    threshold: float = 0.05
    metric: str = "cosine"
    # 为空时由特征文件第一条记录决定
    dimension: Optional[int] = None
    similarity_mode: str = "centroid"
    matrix_workers: int = 1


@dataclass
class PipelineConfig:
    """推理流水线配置"""
    pad_fraction: float = 0.0
    mode: str = "dual_parallel"
    track_workers: int = 1


@dataclass
class MockConfig:
    """模拟检测器/分类器配置"""
    seed: int = 0
    accuracy: float = 1.0
    detector_latency_ms: float = 0.0
    detector_jitter_ms: float = 0.0
    classifier_latency_ms: float = 0.0
    classifier_jitter_ms: float = 0.0


@dataclass
class BenchConfig:
    """基准测试配置"""
    repetitions: int = 5


@dataclass
class LoggingConfig:
    """日志配置"""
    level: str = "INFO"
    format: str = "detailed"
    log_dir: str = "./logs"
    log_file: str = "extension.log"
    error_log_file: str = "error.log"
    enable_file_logging: bool = False
    log_max_size: int = 100 * 1024 * 1024  # 100MB
    log_backup_count: int = 10


class Config:
    """主配置类"""

    _SECTIONS = ("similarity", "pipeline", "mock", "bench", "logging")

    def __init__(self, config_file: Optional[str] = None, env_file: Optional[str] = None):
        """初始化配置

        Args:
            config_file: 配置文件路径
            env_file: 环境变量文件路径
        """
        if env_file:
            load_dotenv(env_file)
        elif os.path.exists(".env"):
            load_dotenv(".env")

        self.similarity = SimilarityConfig()
        self.pipeline = PipelineConfig()
        self.mock = MockConfig()
        self.bench = BenchConfig()
        self.logging = LoggingConfig()

        if config_file:
            self.load_from_file(config_file)
        else:
            for config_path in ["configs/extension.yaml", "extension.yaml"]:
                if os.path.exists(config_path):
                    self.load_from_file(config_path)
                    break

        self.load_from_env()
        self.validate()

    def load_from_file(self, config_file: str) -> None:
        """从YAML文件加载配置"""
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                config_data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            logging.getLogger(__name__).warning(f"加载配置文件失败: {config_file}, 错误: {e}")
            return

        for section in self._SECTIONS:
            if section in config_data and isinstance(config_data[section], dict):
                self._update_dataclass(getattr(self, section), config_data[section])

    def load_from_env(self) -> None:
        """从环境变量加载配置"""
        # 相似度配置
        if os.getenv("EXT_THRESHOLD"):
            self.similarity.threshold = float(os.getenv("EXT_THRESHOLD"))
        if os.getenv("EXT_METRIC"):
            self.similarity.metric = os.getenv("EXT_METRIC")
        if os.getenv("FEATURE_DIM"):
            self.similarity.dimension = int(os.getenv("FEATURE_DIM"))
        if os.getenv("SIMILARITY_MODE"):
            self.similarity.similarity_mode = os.getenv("SIMILARITY_MODE")

        # 流水线配置
        if os.getenv("PAD_FRACTION"):
            self.pipeline.pad_fraction = float(os.getenv("PAD_FRACTION"))
        if os.getenv("PIPELINE_MODE"):
            self.pipeline.mode = os.getenv("PIPELINE_MODE")

        # 模拟后端配置
        if os.getenv("MOCK_SEED"):
            self.mock.seed = int(os.getenv("MOCK_SEED"))
        if os.getenv("MOCK_ACCURACY"):
            self.mock.accuracy = float(os.getenv("MOCK_ACCURACY"))
        if os.getenv("DETECTOR_LATENCY_MS"):
            self.mock.detector_latency_ms = float(os.getenv("DETECTOR_LATENCY_MS"))
        if os.getenv("CLASSIFIER_LATENCY_MS"):
            self.mock.classifier_latency_ms = float(os.getenv("CLASSIFIER_LATENCY_MS"))

        # 基准测试配置
        if os.getenv("BENCH_REPETITIONS"):
            self.bench.repetitions = int(os.getenv("BENCH_REPETITIONS"))

        # 日志配置
        if os.getenv("LOG_LEVEL"):
            self.logging.level = os.getenv("LOG_LEVEL")
        if os.getenv("LOG_FORMAT"):
            self.logging.format = os.getenv("LOG_FORMAT")
        if os.getenv("LOG_DIR"):
            self.logging.log_dir = os.getenv("LOG_DIR")
        if os.getenv("ENABLE_FILE_LOGGING"):
            self.logging.enable_file_logging = os.getenv("ENABLE_FILE_LOGGING").lower() == "true"

    def _update_dataclass(self, instance: Any, data: Dict[str, Any]) -> None:
        """更新dataclass实例"""
        for key, value in data.items():
            if hasattr(instance, key):
                setattr(instance, key, value)

    def validate(self) -> None:
        """验证配置"""
        errors = []

        if not self.similarity.threshold > 0:
            errors.append(f"相似度阈值必须为正: {self.similarity.threshold}")
        if self.similarity.metric not in METRIC_CHOICES:
            errors.append(f"无效的距离度量: {self.similarity.metric}")
        if self.similarity.dimension is not None and self.similarity.dimension <= 0:
            errors.append(f"无效的特征维度: {self.similarity.dimension}")
        if self.similarity.similarity_mode not in SIMILARITY_MODES:
            errors.append(f"无效的相似度模式: {self.similarity.similarity_mode}")
        if self.similarity.matrix_workers < 1:
            errors.append(f"无效的矩阵并行数: {self.similarity.matrix_workers}")

        if self.pipeline.pad_fraction < 0:
            errors.append(f"裁剪扩展比例不能为负: {self.pipeline.pad_fraction}")
        if self.pipeline.mode not in RUN_MODES:
            errors.append(f"无效的运行模式: {self.pipeline.mode}")
        if self.pipeline.track_workers < 1:
            errors.append(f"无效的轨迹并行数: {self.pipeline.track_workers}")

        if not 0.0 <= self.mock.accuracy <= 1.0:
            errors.append(f"模拟分类器准确率必须在[0, 1]: {self.mock.accuracy}")
        for name in ("detector_latency_ms", "detector_jitter_ms",
                     "classifier_latency_ms", "classifier_jitter_ms"):
            if getattr(self.mock, name) < 0:
                errors.append(f"延迟不能为负: {name}={getattr(self.mock, name)}")

        if self.bench.repetitions < 1:
            errors.append(f"基准重复次数至少为1: {self.bench.repetitions}")

        if self.logging.format not in LOG_FORMATS:
            errors.append(f"无效的日志格式: {self.logging.format}")

        if errors:
            raise ValueError(f"配置验证失败: {'; '.join(errors)}")

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {section: asdict(getattr(self, section)) for section in self._SECTIONS}

    def __str__(self) -> str:
        """字符串表示"""
        return (f"Config(threshold={self.similarity.threshold}, metric={self.similarity.metric}, "
                f"mode={self.pipeline.mode})")


@dataclass
class RunConfig:
    """单次命令运行的参数（CLI参数叠加在Config之上）"""
    threshold: float = 0.05
    metric: str = "cosine"
    pad_fraction: float = 0.0
    mode: str = "dual_parallel"
    features_path: Optional[str] = None
    scenario_path: Optional[str] = None
    compat_path: Optional[str] = None
    detections_path: Optional[str] = None
    out_path: Optional[str] = None
    stats_out_path: Optional[str] = None

    # 各模式必须提供的路径
    _REQUIRED_PATHS = {
        "dual_parallel": ("scenario_path", "compat_path", "out_path"),
        "sequential": ("scenario_path", "compat_path", "out_path"),
        "tracked": ("scenario_path", "compat_path", "out_path"),
    }

    @classmethod
    def from_config(cls, config: Config, **overrides: Any) -> "RunConfig":
        """以Config为默认值创建运行配置，None值的覆盖项被忽略"""
        run_config = cls(
            threshold=config.similarity.threshold,
            metric=config.similarity.metric,
            pad_fraction=config.pipeline.pad_fraction,
            mode=config.pipeline.mode,
        )
        for key, value in overrides.items():
            if value is not None and hasattr(run_config, key):
                setattr(run_config, key, value)
        return run_config

    def validate(self, required: Optional[List[str]] = None) -> None:
        """验证运行配置

        Args:
            required: 额外要求存在的路径字段
        """
        errors = []
        if not self.threshold > 0:
            errors.append(f"相似度阈值必须为正: {self.threshold}")
        if self.metric not in METRIC_CHOICES:
            errors.append(f"无效的距离度量: {self.metric}")
        if self.pad_fraction < 0:
            errors.append(f"裁剪扩展比例不能为负: {self.pad_fraction}")
        if self.mode not in RUN_MODES:
            errors.append(f"无效的运行模式: {self.mode}")

        for name in list(required or []):
            if not getattr(self, name):
                errors.append(f"缺少参数: {name}")

        if errors:
            raise ValueError(f"运行配置验证失败: {'; '.join(errors)}")

    def validate_for_mode(self) -> None:
        """按运行模式验证必需路径"""
        self.validate(list(self._REQUIRED_PATHS.get(self.mode, ())))


_config: Optional[Config] = None


def get_config() -> Config:
    """获取全局配置实例（首次调用时加载）"""
    global _config
    if _config is None:
        _config = Config()
    return _config


def reload_config(config_file: Optional[str] = None, env_file: Optional[str] = None) -> Config:
    """重新加载配置"""
    global _config
    _config = Config(config_file, env_file)
    return _config
