"""
特征存储模块

负责加载、验证和提供基础类别与扩展类别的带标签特征向量。
特征按原样使用，不做归一化；维度默认2048，可配置。
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .exceptions import DimensionMismatch, EmptyStore, MalformedRecord, ZeroVector
from .utils import iter_jsonl, write_jsonl
from .validators import parse_feature_line


logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 2048


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """单条带标签特征向量"""
    class_label: str
    sample_id: str
    vector: np.ndarray

    def to_record(self) -> Dict[str, object]:
        """转换为外部文件格式"""
        return {
            "class": self.class_label,
            "id": self.sample_id,
            "vector": [float(value) for value in self.vector],
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (self.class_label == other.class_label
                and self.sample_id == other.sample_id
                and np.array_equal(self.vector, other.vector))

    __hash__ = None  # type: ignore[assignment]


class FeatureStore:
    """按类别组织的特征存储，加载后不可变"""

    def __init__(self, classes: Optional[Mapping[str, Sequence[FeatureRecord]]] = None,
                 dimension: int = DEFAULT_DIMENSION):
        """初始化特征存储

        Args:
            classes: 类别 -> 记录列表（保持插入顺序）
            dimension: 特征维度D
        """
        classes = classes or {}
        if dimension <= 0:
            raise ValueError(f"特征维度必须为正: {dimension}")
        self._dimension = dimension
        self._classes: Dict[str, tuple] = {}

        for label, records in classes.items():
            if not records:
                raise EmptyStore(f"类别 {label} 没有任何记录")
            seen = set()
            for record in records:
                if record.vector.shape != (dimension,):
                    raise DimensionMismatch(dimension, int(record.vector.size),
                                            context=f"类别 {label} 的样本 {record.sample_id}")
                if record.sample_id in seen:
                    raise ValueError(f"类别 {label} 的样本ID重复: {record.sample_id}")
                seen.add(record.sample_id)
            self._classes[label] = tuple(records)

        # 只读矩阵缓存，供多线程并发读取
        self._matrices: Dict[str, np.ndarray] = {}
        for label, records in self._classes.items():
            matrix = np.vstack([record.vector for record in records])
            matrix.setflags(write=False)
            self._matrices[label] = matrix

    @property
    def dimension(self) -> int:
        """特征维度D"""
        return self._dimension

    @property
    def labels(self) -> List[str]:
        """类别列表，按首次出现顺序"""
        return list(self._classes)

    def __contains__(self, label: object) -> bool:
        return label in self._classes

    def __len__(self) -> int:
        return len(self._classes)

    def records(self, label: str) -> List[FeatureRecord]:
        """获取某类别的全部记录"""
        return list(self._classes[label])

    def vectors(self, label: str) -> np.ndarray:
        """获取某类别的特征矩阵 (n_i x D)，只读"""
        return self._matrices[label]

    def sample_counts(self) -> Dict[str, int]:
        """各类别样本数"""
        return {label: len(records) for label, records in self._classes.items()}

    def iter_records(self) -> Iterable[FeatureRecord]:
        """按类别顺序遍历全部记录"""
        for records in self._classes.values():
            yield from records

    @classmethod
    def from_records(cls, records: Iterable[FeatureRecord],
                     dimension: Optional[int] = None) -> "FeatureStore":
        """从记录序列构建存储，维度默认取第一条记录的长度"""
        grouped: Dict[str, List[FeatureRecord]] = {}
        for record in records:
            if dimension is None:
                dimension = int(record.vector.size)
            grouped.setdefault(record.class_label, []).append(record)
        if not grouped:
            raise EmptyStore("没有任何特征记录")
        return cls(grouped, dimension)


def make_record(class_label: str, sample_id: str,
                vector: Union[Sequence[float], np.ndarray]) -> FeatureRecord:
    """创建特征记录并检查零向量"""
    array = np.asarray(vector, dtype=np.float64).copy()
    array.setflags(write=False)
    if not np.any(array):
        raise ZeroVector(class_label, sample_id)
    return FeatureRecord(class_label=class_label, sample_id=sample_id, vector=array)


def load_feature_store(path: Union[str, Path], expected_dim: Optional[int] = None) -> FeatureStore:
    """从JSONL特征文件加载存储

    Args:
        path: 特征文件路径
        expected_dim: 期望的维度；为空时由第一条记录决定

    Returns:
        满足全部不变量的FeatureStore

    Raises:
        MalformedRecord: 记录格式错误（带行号）
        DimensionMismatch: 维度不一致（带行号）
        ZeroVector: 全零向量（带类别和样本ID）
        EmptyStore: 文件中没有记录
    """
    if expected_dim is not None and expected_dim <= 0:
        raise ValueError(f"期望维度必须为正: {expected_dim}")

    dimension = expected_dim
    grouped: Dict[str, List[FeatureRecord]] = {}
    seen_ids: Dict[str, set] = {}

    for line_number, text in iter_jsonl(path):
        line = parse_feature_line(line_number, text)

        if dimension is None:
            dimension = len(line.vector)
        elif len(line.vector) != dimension:
            raise DimensionMismatch(dimension, len(line.vector), line_number=line_number)

        ids = seen_ids.setdefault(line.class_label, set())
        if line.sample_id in ids:
            raise MalformedRecord(line_number, f"类别 {line.class_label} 的样本ID重复: {line.sample_id}")
        ids.add(line.sample_id)

        record = make_record(line.class_label, line.sample_id, line.vector)
        grouped.setdefault(line.class_label, []).append(record)

    if not grouped:
        raise EmptyStore(f"特征文件中没有记录: {path}")

    store = FeatureStore(grouped, dimension)
    logger.info(f"特征加载完成: {path}, 类别数: {len(store)}, 维度: {store.dimension}")
    return store


def write_feature_store(store: FeatureStore, path: Union[str, Path]) -> int:
    """将存储写回外部JSONL格式

    Returns:
        写入的记录数
    """
    return write_jsonl(path, (record.to_record() for record in store.iter_records()))


@dataclass
class ValidationReport:
    """特征存储验证报告"""
    missing_classes: List[str] = field(default_factory=list)
    sample_counts: Dict[str, int] = field(default_factory=dict)
    dimension: Optional[int] = None

    @property
    def is_complete(self) -> bool:
        """是否包含全部必需类别"""
        return not self.missing_classes

    def to_dict(self) -> Dict[str, object]:
        return {
            "missing": list(self.missing_classes),
            "counts": dict(self.sample_counts),
            "dimension": self.dimension,
        }


def validate_store(store: Optional[FeatureStore], required_classes: Iterable[str]) -> ValidationReport:
    """检查存储是否包含所需类别，并汇总样本数和维度

    store为None表示空存储，此时维度为空。
    """
    required = list(dict.fromkeys(required_classes))
    if store is None:
        return ValidationReport(missing_classes=required)

    missing = [label for label in required if label not in store]
    if missing:
        logger.warning(f"特征存储缺少类别: {', '.join(missing)}")
    return ValidationReport(
        missing_classes=missing,
        sample_counts=store.sample_counts(),
        dimension=store.dimension,
    )
