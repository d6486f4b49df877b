"""
相似度计算模块

计算各类别的特征质心、类别间的两两距离矩阵，以及基于阈值的兼容类别选择
"""

import csv
import io
import logging
import numbers
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .exceptions import (
    DimensionMismatch,
    DuplicateLabel,
    EmptyInput,
    MalformedCompatibility,
    NonPositiveThreshold,
    OverlappingSets,
    UnknownClass,
    ZeroVector,
)
from .feature_store import FeatureStore
from .utils import read_json, write_json
from .validators import finite_float, finite_floats, validate_compatibility_document


logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05

VectorLike = Union[Sequence[float], np.ndarray]


class DistanceMetric(str, Enum):
    """距离度量"""
    COSINE = "cosine"
    L1 = "l1"
    L2 = "l2"
    SQUARED_L2 = "squared_l2"

    @classmethod
    def parse(cls, value: Union[str, "DistanceMetric"]) -> "DistanceMetric":
        """从字符串解析度量名称"""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(metric.value for metric in cls)
            raise ValueError(f"未知的距离度量: {value}，可选: {choices}") from None


class SimilarityMode(str, Enum):
    """类别相似度的计算方式"""
    CENTROID = "centroid"
    AVERAGE_PAIRWISE = "average_pairwise"


@dataclass(frozen=True, eq=False)
class ClassCentroid:
    """类别特征质心"""
    class_label: str
    centroid: np.ndarray
    inertia: float
    sample_count: int

    @property
    def dimension(self) -> int:
        return int(self.centroid.size)

    @property
    def spread(self) -> float:
        """类内离散度：样本到质心的平均平方距离"""
        return self.inertia / self.sample_count

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.class_label,
            "centroid": [float(value) for value in self.centroid],
            "inertia": self.inertia,
            "count": self.sample_count,
            "spread": self.spread,
        }


def _as_vector(value: VectorLike) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 1:
        raise ValueError(f"期望一维向量，实际形状: {array.shape}")
    return array


def compute_centroid(vectors: Union[Sequence[VectorLike], np.ndarray],
                     class_label: str = "") -> ClassCentroid:
    """计算单类别质心（等价于单簇k-means的收敛结果）

    Args:
        vectors: 同一类别的特征向量列表
        class_label: 类别标签

    Returns:
        ClassCentroid，质心为逐分量算术平均，惯性为到质心的平方距离之和

    Raises:
        EmptyInput: 输入为空
        DimensionMismatch: 向量长度不一致
    """
    if len(vectors) == 0:
        raise EmptyInput(f"类别 {class_label or '<未命名>'} 没有任何向量")

    expected = len(vectors[0])
    for vector in vectors:
        if len(vector) != expected:
            raise DimensionMismatch(expected, len(vector), context=f"类别 {class_label} 的质心计算")

    matrix = np.asarray(vectors, dtype=np.float64)
    if np.all(matrix == matrix[0]):
        # 全部相同时直接取该向量，避免求和舍入引入非零惯性
        centroid = matrix[0].copy()
        inertia = 0.0
    else:
        centroid = matrix.mean(axis=0)
        inertia = float(np.sum((matrix - centroid) ** 2))

    centroid.setflags(write=False)
    return ClassCentroid(
        class_label=class_label,
        centroid=centroid,
        inertia=inertia,
        sample_count=int(matrix.shape[0]),
    )


def centroids_for_store(store: FeatureStore, labels: Optional[Iterable[str]] = None) -> List[ClassCentroid]:
    """为存储中的类别计算质心，默认全部类别（按存储顺序）"""
    labels = list(labels) if labels is not None else store.labels
    missing = [label for label in labels if label not in store]
    if missing:
        raise UnknownClass(missing)
    return [compute_centroid(store.vectors(label), label) for label in labels]


def distance(a: VectorLike, b: VectorLike,
             metric: Union[str, DistanceMetric] = DistanceMetric.COSINE) -> float:
    """计算两个向量之间的距离

    余弦距离 = 1 - (A·B)/(‖A‖·‖B‖)，取值[0, 2]

    Raises:
        DimensionMismatch: 长度不同
        ZeroVector: 余弦度量下存在全零向量
    """
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(a.size, b.size, context="距离计算")

    metric = DistanceMetric.parse(metric)
    if metric is DistanceMetric.COSINE:
        norm_a = float(np.linalg.norm(a))
        norm_b = float(np.linalg.norm(b))
        if norm_a == 0.0 or norm_b == 0.0:
            raise ZeroVector()
        value = 1.0 - float(np.dot(a, b)) / (norm_a * norm_b)
        return min(max(value, 0.0), 2.0)

    diff = a - b
    if metric is DistanceMetric.L1:
        return float(np.sum(np.abs(diff)))
    if metric is DistanceMetric.L2:
        return float(np.sqrt(np.dot(diff, diff)))
    return float(np.dot(diff, diff))


def average_pairwise_distance(vectors_a: Union[Sequence[VectorLike], np.ndarray],
                              vectors_b: Union[Sequence[VectorLike], np.ndarray],
                              metric: Union[str, DistanceMetric] = DistanceMetric.COSINE) -> float:
    """两组特征向量之间所有跨组向量对的平均距离"""
    matrix_a = np.asarray(vectors_a, dtype=np.float64)
    matrix_b = np.asarray(vectors_b, dtype=np.float64)
    if matrix_a.size == 0 or matrix_b.size == 0:
        raise EmptyInput("平均距离需要两组非空向量")
    if matrix_a.ndim != 2 or matrix_b.ndim != 2 or matrix_a.shape[1] != matrix_b.shape[1]:
        raise DimensionMismatch(matrix_a.shape[-1], matrix_b.shape[-1], context="平均距离计算")

    metric = DistanceMetric.parse(metric)
    if metric is DistanceMetric.COSINE:
        norms_a = np.linalg.norm(matrix_a, axis=1)
        norms_b = np.linalg.norm(matrix_b, axis=1)
        if np.any(norms_a == 0) or np.any(norms_b == 0):
            raise ZeroVector()
        cosine = (matrix_a / norms_a[:, None]) @ (matrix_b / norms_b[:, None]).T
        values = np.clip(1.0 - cosine, 0.0, 2.0)
        return float(values.mean())

    total = 0.0
    for row in matrix_a:
        diff = matrix_b - row
        if metric is DistanceMetric.L1:
            total += float(np.abs(diff).sum())
        elif metric is DistanceMetric.L2:
            total += float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum())
        else:
            total += float(np.einsum("ij,ij->i", diff, diff).sum())
    return total / (matrix_a.shape[0] * matrix_b.shape[0])


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """类别两两距离矩阵（对称，对角线为0）"""
    labels: Tuple[str, ...]
    metric: DistanceMetric
    distances: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.labels)
        if len(set(self.labels)) != n:
            raise DuplicateLabel(f"距离矩阵中存在重复类别: {list(self.labels)}")
        if self.distances.shape != (n, n):
            raise ValueError(f"距离矩阵形状 {self.distances.shape} 与类别数 {n} 不符")
        if not np.array_equal(self.distances, self.distances.T):
            raise ValueError("距离矩阵必须对称")
        if np.any(np.diag(self.distances) != 0):
            raise ValueError("距离矩阵对角线必须为0")
        if np.any(self.distances < 0):
            raise ValueError("距离不能为负")
        self.distances.setflags(write=False)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownClass([label]) from None

    def distance(self, a: str, b: str) -> float:
        """按类别名取距离"""
        return float(self.distances[self.index(a), self.index(b)])

    @classmethod
    def from_pairs(cls, labels: Sequence[str], pairs: Mapping[Tuple[str, str], float],
                   metric: Union[str, DistanceMetric] = DistanceMetric.COSINE) -> "SimilarityMatrix":
        """由无序类别对的距离构造矩阵；每对只需给出一个方向"""
        labels = tuple(labels)
        n = len(labels)
        distances = np.zeros((n, n), dtype=np.float64)
        position = {label: i for i, label in enumerate(labels)}
        for (a, b), value in pairs.items():
            if a not in position or b not in position:
                raise UnknownClass([label for label in (a, b) if label not in position])
            i, j = position[a], position[b]
            if i != j:
                distances[i, j] = distances[j, i] = float(value)
        return cls(labels, DistanceMetric.parse(metric), distances)

    def to_csv_text(self) -> str:
        """导出CSV：表头 class,<label1>,...，距离保留6位小数"""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["class", *self.labels])
        for label, row in zip(self.labels, self.distances):
            writer.writerow([label, *(f"{value:.6f}" for value in row)])
        return buffer.getvalue()

    def write_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text(), encoding="utf-8")


def _check_unique(labels: Sequence[str]) -> None:
    seen = set()
    duplicates = []
    for label in labels:
        if label in seen:
            duplicates.append(label)
        seen.add(label)
    if duplicates:
        raise DuplicateLabel(f"重复的类别: {', '.join(duplicates)}")


def _fill_matrix(labels: Sequence[str], pair_distance: Callable[[int, int], float],
                 max_workers: int) -> np.ndarray:
    """每个无序类别对只计算一次，结果镜像到下三角"""
    n = len(labels)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            values = list(executor.map(lambda pair: pair_distance(*pair), pairs))
    else:
        values = [pair_distance(i, j) for i, j in pairs]

    distances = np.zeros((n, n), dtype=np.float64)
    for (i, j), value in zip(pairs, values):
        distances[i, j] = distances[j, i] = value
    return distances


def similarity_matrix(centroids: Sequence[ClassCentroid],
                      metric: Union[str, DistanceMetric] = DistanceMetric.COSINE,
                      max_workers: int = 1) -> SimilarityMatrix:
    """计算质心两两距离矩阵

    Args:
        centroids: 至少2个类别质心，标签唯一，维度相同
        metric: 距离度量
        max_workers: 并行计算的线程数，结果与顺序计算逐位一致

    Raises:
        DuplicateLabel: 标签重复
        DimensionMismatch: 质心维度不一致
    """
    if len(centroids) < 2:
        raise EmptyInput(f"距离矩阵至少需要2个类别，实际: {len(centroids)}")

    labels = [centroid.class_label for centroid in centroids]
    _check_unique(labels)

    dimension = centroids[0].dimension
    for centroid in centroids:
        if centroid.dimension != dimension:
            raise DimensionMismatch(dimension, centroid.dimension,
                                    context=f"类别 {centroid.class_label} 的质心")

    metric = DistanceMetric.parse(metric)
    distances = _fill_matrix(
        labels,
        lambda i, j: distance(centroids[i].centroid, centroids[j].centroid, metric),
        max_workers,
    )
    logger.debug(f"质心距离矩阵计算完成，类别数: {len(labels)}, 度量: {metric.value}")
    return SimilarityMatrix(tuple(labels), metric, distances)


def pairwise_similarity_matrix(store: FeatureStore, labels: Optional[Sequence[str]] = None,
                               metric: Union[str, DistanceMetric] = DistanceMetric.COSINE,
                               max_workers: int = 1) -> SimilarityMatrix:
    """以类别间特征向量的平均距离构造矩阵"""
    labels = list(labels) if labels is not None else store.labels
    if len(labels) < 2:
        raise EmptyInput(f"距离矩阵至少需要2个类别，实际: {len(labels)}")
    _check_unique(labels)
    missing = [label for label in labels if label not in store]
    if missing:
        raise UnknownClass(missing)

    metric = DistanceMetric.parse(metric)
    distances = _fill_matrix(
        labels,
        lambda i, j: average_pairwise_distance(store.vectors(labels[i]), store.vectors(labels[j]), metric),
        max_workers,
    )
    return SimilarityMatrix(tuple(labels), metric, distances)


def build_similarity_matrix(store: FeatureStore, labels: Optional[Sequence[str]] = None,
                            metric: Union[str, DistanceMetric] = DistanceMetric.COSINE,
                            mode: Union[str, SimilarityMode] = SimilarityMode.CENTROID,
                            max_workers: int = 1) -> SimilarityMatrix:
    """按相似度模式从特征存储构造距离矩阵"""
    mode = SimilarityMode(mode)
    if mode is SimilarityMode.AVERAGE_PAIRWISE:
        return pairwise_similarity_matrix(store, labels, metric, max_workers)
    return similarity_matrix(centroids_for_store(store, labels), metric, max_workers)


class CompatibleClass(NamedTuple):
    """兼容的基础类别及其到扩展类别的距离"""
    base: str
    distance: float


@dataclass(frozen=True)
class CompatibilityMap:
    """扩展类别 -> 兼容基础类别（按距离升序）"""
    threshold: float
    entries: Dict[str, List[CompatibleClass]]

    @property
    def extension_labels(self) -> List[str]:
        return list(self.entries)

    @property
    def unmatched(self) -> List[str]:
        """没有任何兼容基础类别的扩展类别（前置条件不满足）"""
        return [label for label, bases in self.entries.items() if not bases]

    @property
    def precondition_met(self) -> bool:
        """每个扩展类别都至少有一个兼容基础类别"""
        return not self.unmatched

    def base_labels(self) -> frozenset:
        """所有扩展类别的兼容基础类别并集"""
        return frozenset(item.base for bases in self.entries.values() for item in bases)

    def is_compatible(self, label: str) -> bool:
        """检测类别是否需要交给分类器"""
        return label in self.base_labels()

    def classifier_labels(self) -> List[str]:
        """分类器需要覆盖的标签：扩展类别与兼容基础类别的并集"""
        return sorted(set(self.entries) | self.base_labels())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "threshold": self.threshold,
            "entries": {
                label: [{"base": item.base, "distance": item.distance} for item in bases]
                for label, bases in self.entries.items()
            },
        }

    @classmethod
    def from_dict(cls, document: Any) -> "CompatibilityMap":
        """从导出格式恢复，校验阈值不变量并重新排序"""
        validate_compatibility_document(document)
        threshold = finite_float(document["threshold"])
        if threshold is None:
            raise MalformedCompatibility("兼容类别阈值不是有限数或超出双精度范围")
        entries: Dict[str, List[CompatibleClass]] = {}
        for label, items in document["entries"].items():
            distances = finite_floats(item["distance"] for item in items)
            if distances is None:
                raise MalformedCompatibility(f"扩展类别 {label} 的距离包含非有限数值")
            bases = [CompatibleClass(item["base"], value) for item, value in zip(items, distances)]
            for item in bases:
                if not item.distance < threshold:
                    raise MalformedCompatibility(
                        f"扩展类别 {label} 的基础类别 {item.base} 距离 {item.distance} 不小于阈值 {threshold}"
                    )
            if label in {item.base for item in bases}:
                raise MalformedCompatibility(f"扩展类别 {label} 不能兼容自身")
            entries[label] = sorted(bases, key=lambda item: (item.distance, item.base))

        overlap = set(entries) & {item.base for bases in entries.values() for item in bases}
        if overlap:
            raise MalformedCompatibility(f"类别同时是扩展类别和基础类别: {', '.join(sorted(overlap))}")
        return cls(threshold, entries)


def select_compatible(matrix: SimilarityMatrix, base_classes: Sequence[str],
                      extension_classes: Sequence[str],
                      threshold: float = DEFAULT_THRESHOLD) -> CompatibilityMap:
    """选择与每个扩展类别距离小于阈值的基础类别

    距离严格小于阈值才入选；结果按距离升序，距离相同按类别名排序。

    Raises:
        NonPositiveThreshold: 阈值不为正
        UnknownClass: 类别不在矩阵中
        OverlappingSets: 基础类别与扩展类别有交集
    """
    if isinstance(threshold, bool) or not isinstance(threshold, numbers.Real) \
            or finite_float(threshold) is None or threshold <= 0:
        raise NonPositiveThreshold(f"相似度阈值必须为正数: {threshold!r}")
    threshold = float(threshold)

    base_classes = list(dict.fromkeys(base_classes))
    extension_classes = list(dict.fromkeys(extension_classes))

    unknown = [label for label in extension_classes + base_classes if label not in matrix.labels]
    if unknown:
        raise UnknownClass(unknown)

    overlap = sorted(set(base_classes) & set(extension_classes))
    if overlap:
        raise OverlappingSets(f"类别同时出现在基础和扩展列表中: {', '.join(overlap)}")

    entries: Dict[str, List[CompatibleClass]] = {}
    for extension in extension_classes:
        candidates = [
            CompatibleClass(base, matrix.distance(extension, base))
            for base in base_classes
        ]
        selected = [item for item in candidates if item.distance < threshold]
        entries[extension] = sorted(selected, key=lambda item: (item.distance, item.base))

    compat = CompatibilityMap(float(threshold), entries)
    for extension in compat.unmatched:
        logger.warning(f"扩展类别 {extension} 在阈值 {threshold} 下没有兼容的基础类别")
    logger.info(f"兼容类别选择完成，阈值: {threshold}, "
                + ", ".join(f"{label}: {[item.base for item in bases]}" for label, bases in entries.items()))
    return compat


def save_compatibility(compat: CompatibilityMap, path: Union[str, Path]) -> None:
    """导出兼容类别JSON"""
    write_json(path, compat.to_dict())


def load_compatibility(path: Union[str, Path]) -> CompatibilityMap:
    """读取兼容类别JSON"""
    try:
        document = read_json(path)
    except ValueError as e:
        raise MalformedCompatibility(f"兼容类别文件不是有效的JSON: {path}: {e}") from e
    return CompatibilityMap.from_dict(document)


def spread_report(centroids: Iterable[ClassCentroid]) -> List[Dict[str, Any]]:
    """按类内离散度降序列出各类别，用于发现样本多样性不足的类别"""
    rows = [
        {"label": c.class_label, "count": c.sample_count, "inertia": c.inertia, "spread": c.spread}
        for c in centroids
    ]
    return sorted(rows, key=lambda row: (-row["spread"], row["label"]))
