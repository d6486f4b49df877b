"""
模拟后端模块

确定性的、带种子的检测器与分类器实现，可配置延迟和混淆行为，
无需训练好的模型即可完整测试流水线。
"""

import hashlib
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    FrameOutOfRange,
    InvalidBox,
    LabelSetMismatch,
    MalformedScenario,
    NoMatchingRegion,
)
from .feature_store import FeatureStore, make_record
from .inference_engine import (
    BoundingBox,
    ClassifierInterface,
    Detection,
    DetectorInterface,
    Frame,
    PredictionObject,
)
from .similarity import DistanceMetric, SimilarityMatrix
from .tracker_correction import TrackedDetection
from .utils import read_json, write_json
from .validators import finite_float, finite_floats, validate_scenario_document


logger = logging.getLogger(__name__)

# 模拟分类器的固定得分
CORRECT_SCORE = 0.9
WRONG_SCORE = 0.6
# 分类区域与脚本检测框的最小交并比
MATCH_IOU = 0.5


def derive_seed(*parts: Any) -> int:
    """由若干键派生出稳定的64位种子（不依赖进程内hash随机化）"""
    digest = hashlib.sha256("|".join(repr(part) for part in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class LatencyModel:
    """模拟延迟：固定部分 + [0, jitter) 的均匀抖动，单位毫秒"""
    fixed_ms: float = 0.0
    jitter_ms: float = 0.0

    def __post_init__(self) -> None:
        for name in ("fixed_ms", "jitter_ms"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"延迟必须为非负有限数: {name}={value}")

    def delay_ms(self, seed: int, *key: Any) -> float:
        """某次调用的延迟，由(seed, key)唯一决定"""
        if self.jitter_ms == 0:
            return self.fixed_ms
        rng = np.random.default_rng(derive_seed(seed, "latency", *key))
        return self.fixed_ms + self.jitter_ms * float(rng.random())

    def wait(self, seed: int, *key: Any) -> None:
        delay = self.delay_ms(seed, *key)
        if delay > 0:
            time.sleep(delay / 1000.0)


@dataclass(frozen=True)
class ScriptedDetection:
    """场景脚本中的一条检测"""
    frame_index: int
    box: BoundingBox
    true_label: str
    emitted_label: str
    confidence: float
    track_id: Optional[int] = None

    @property
    def confused(self) -> bool:
        return self.true_label != self.emitted_label

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "frame": self.frame_index,
            "box": self.box.to_list(),
            "true": self.true_label,
            "emitted": self.emitted_label,
            "confidence": self.confidence,
        }
        if self.track_id is not None:
            record["track"] = self.track_id
        return record


@dataclass(frozen=True)
class MockScenario:
    """模拟场景：帧数、帧尺寸和逐帧检测脚本"""
    seed: int
    frame_count: int
    frame_size: Tuple[int, int]
    script: Tuple[Tuple[ScriptedDetection, ...], ...]
    confusions: FrozenSet[Tuple[str, str]] = frozenset()
    classifier_labels: Tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return self.frame_size[0]

    @property
    def height(self) -> int:
        return self.frame_size[1]

    def detections_for(self, frame_index: int) -> Tuple[ScriptedDetection, ...]:
        """第k帧的脚本检测

        Raises:
            FrameOutOfRange: k不在[0, frame_count)
        """
        if not 0 <= frame_index < self.frame_count:
            raise FrameOutOfRange(frame_index, self.frame_count)
        return self.script[frame_index]

    def all_detections(self) -> List[ScriptedDetection]:
        return [detection for frame_script in self.script for detection in frame_script]

    def to_dict(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "seed": self.seed,
            "frames": self.frame_count,
            "size": list(self.frame_size),
            "script": [detection.to_record() for detection in self.all_detections()],
        }
        if self.confusions:
            document["confusions"] = [list(pair) for pair in sorted(self.confusions)]
        if self.classifier_labels:
            document["classifier_labels"] = list(self.classifier_labels)
        return document


def build_scenario(document: Any) -> MockScenario:
    """从场景文档构造并验证场景

    未声明confusions时，脚本中出现的(真实, 输出)标签对即视为声明的混淆对。

    Raises:
        MalformedScenario: 结构错误、帧序号越界、混淆对未声明或轨迹重复
        InvalidBox: 边界框超出帧范围（带帧序号）
    """
    validate_scenario_document(document)

    frame_count = int(document["frames"])
    width, height = (int(value) for value in document["size"])
    per_frame: List[List[ScriptedDetection]] = [[] for _ in range(frame_count)]
    seen_tracks = set()

    for position, entry in enumerate(document["script"]):
        frame_index = entry["frame"]
        if frame_index >= frame_count:
            raise MalformedScenario(f"脚本第 {position} 项的帧序号 {frame_index} 超出帧数 {frame_count}")
        if finite_float(entry["confidence"]) is None:
            raise MalformedScenario(f"脚本第 {position} 项的置信度不是有限数")
        coords = finite_floats(entry["box"])
        if coords is None:
            raise MalformedScenario(f"脚本第 {position} 项的边界框包含非有限数值或超出双精度范围的数值")

        box = BoundingBox.from_list(coords)
        if not box.is_within(width, height):
            raise InvalidBox(f"第 {frame_index} 帧的脚本边界框 {box.to_list()} 超出 {width}x{height}",
                             frame_index=frame_index)

        track_id = entry.get("track")
        if track_id is not None:
            if (track_id, frame_index) in seen_tracks:
                raise MalformedScenario(f"轨迹 {track_id} 在第 {frame_index} 帧出现多次")
            seen_tracks.add((track_id, frame_index))

        per_frame[frame_index].append(ScriptedDetection(
            frame_index=frame_index,
            box=box,
            true_label=entry["true"],
            emitted_label=entry["emitted"],
            confidence=float(entry["confidence"]),
            track_id=track_id,
        ))

    scripted_pairs = {
        (detection.true_label, detection.emitted_label)
        for frame_script in per_frame for detection in frame_script if detection.confused
    }
    if "confusions" in document:
        confusions = frozenset((true, emitted) for true, emitted in document["confusions"])
        undeclared = sorted(scripted_pairs - confusions)
        if undeclared:
            raise MalformedScenario(f"脚本中存在未声明的混淆对: {undeclared}")
    else:
        confusions = frozenset(scripted_pairs)

    return MockScenario(
        seed=int(document["seed"]),
        frame_count=frame_count,
        frame_size=(width, height),
        script=tuple(tuple(frame_script) for frame_script in per_frame),
        confusions=confusions,
        classifier_labels=tuple(document.get("classifier_labels", ())),
    )


def load_scenario(path: Union[str, Path]) -> MockScenario:
    """读取场景JSON文件

    Raises:
        MalformedScenario: 不是有效JSON或结构错误
        InvalidBox: 边界框超出帧范围（带帧序号）
    """
    try:
        document = read_json(path)
    except ValueError as e:
        raise MalformedScenario(f"场景文件不是有效的JSON: {path}: {e}") from e
    scenario = build_scenario(document)
    logger.info(f"场景加载完成: {path}, 帧数: {scenario.frame_count}, "
                f"检测数: {len(scenario.all_detections())}")
    return scenario


def write_scenario(scenario: MockScenario, path: Union[str, Path]) -> None:
    write_json(path, scenario.to_dict())


def frames_from_scenario(scenario: MockScenario) -> List[Frame]:
    """生成场景的帧序列，payload为模拟令牌"""
    return [
        Frame(index, scenario.width, scenario.height, f"mock:{scenario.seed}:{index}".encode("ascii"))
        for index in range(scenario.frame_count)
    ]


def scenario_tracked_detections(scenario: MockScenario) -> List[TrackedDetection]:
    """把带轨迹ID的脚本检测转换为跟踪器输出（标签为检测器输出标签）"""
    detections = [
        TrackedDetection(
            frame_index=detection.frame_index,
            track_id=detection.track_id,
            box=detection.box,
            class_label=detection.emitted_label,
            confidence=detection.confidence,
        )
        for detection in scenario.all_detections()
        if detection.track_id is not None
    ]
    skipped = len(scenario.all_detections()) - len(detections)
    if skipped:
        logger.debug(f"跳过 {skipped} 条没有轨迹ID的脚本检测")
    return detections


class MockDetector(DetectorInterface):
    """按脚本输出检测结果的模拟检测器"""

    def __init__(self, scenario: MockScenario, latency: Optional[LatencyModel] = None):
        self._scenario = scenario
        self._latency = latency or LatencyModel()

    @property
    def scenario(self) -> MockScenario:
        return self._scenario

    def detect(self, frame: Frame) -> PredictionObject:
        script = self._scenario.detections_for(frame.index)
        self._latency.wait(self._scenario.seed, "detector", frame.index)
        return PredictionObject(
            frame.index,
            tuple(Detection(item.box, item.emitted_label, item.confidence) for item in script),
        )


class MockClassifier(ClassifierInterface):
    """按脚本真实标签回答的模拟分类器

    区域与脚本检测框按交并比匹配（>= 0.5，取最大者，相同取脚本中靠前者）；
    以accuracy的概率返回真实标签，否则返回标签集合中的一个错误标签。
    每个(帧, 区域)的随机数独立派生，多次调用结果一致。
    """

    def __init__(self, scenario: MockScenario, label_set: Sequence[str], accuracy: float = 1.0,
                 latency: Optional[LatencyModel] = None):
        if not math.isfinite(accuracy) or not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"准确率必须在[0, 1]: {accuracy}")
        labels = tuple(dict.fromkeys(label_set))
        if not labels:
            raise ValueError("分类器标签集合不能为空")

        missing = sorted({
            detection.true_label for detection in scenario.all_detections()
            if detection.confused and detection.true_label not in labels
        })
        if missing:
            raise LabelSetMismatch(missing)

        self._scenario = scenario
        self._labels = labels
        self._accuracy = float(accuracy)
        self._latency = latency or LatencyModel()

    @property
    def accuracy(self) -> float:
        return self._accuracy

    def label_set(self) -> List[str]:
        return list(self._labels)

    def match(self, frame_index: int, box: BoundingBox) -> ScriptedDetection:
        """找到与区域最匹配的脚本检测

        Raises:
            FrameOutOfRange: 帧序号越界
            NoMatchingRegion: 没有交并比 >= 0.5 的脚本检测
        """
        best: Optional[ScriptedDetection] = None
        best_iou = 0.0
        for detection in self._scenario.detections_for(frame_index):
            overlap = detection.box.iou(box)
            if overlap >= MATCH_IOU and overlap > best_iou:
                best, best_iou = detection, overlap
        if best is None:
            raise NoMatchingRegion(f"第 {frame_index} 帧的区域 {box.to_list()} 没有匹配的脚本检测")
        return best

    def classify(self, frame: Frame, box: BoundingBox) -> Tuple[str, float]:
        target = self.match(frame.index, box)
        key = (frame.index, *box.to_list())
        self._latency.wait(self._scenario.seed, "classifier", *key)

        rng = np.random.default_rng(derive_seed(self._scenario.seed, "classify", *key))
        if target.true_label in self._labels and rng.random() < self._accuracy:
            return target.true_label, CORRECT_SCORE

        wrong = [label for label in self._labels if label != target.true_label]
        if not wrong:
            return target.true_label, CORRECT_SCORE
        return wrong[int(rng.integers(len(wrong)))], WRONG_SCORE


def mock_detector(scenario: MockScenario, latency: Optional[LatencyModel] = None) -> MockDetector:
    return MockDetector(scenario, latency)


def mock_classifier(scenario: MockScenario, label_set: Sequence[str], accuracy: float = 1.0,
                    latency: Optional[LatencyModel] = None) -> MockClassifier:
    return MockClassifier(scenario, label_set, accuracy, latency)


def generate_scenario(seed: int, frame_count: int = 30, frame_size: Tuple[int, int] = (640, 480),
                      track_count: int = 5,
                      labels: Sequence[str] = ("Car", "Truck", "Bus", "Person"),
                      confusions: Sequence[Tuple[str, str]] = (("Van", "Truck"),),
                      confusion_probability: float = 0.4,
                      presence: float = 0.85) -> MockScenario:
    """生成带种子的随机场景

    每条轨迹有固定的(真实, 输出)标签，按概率使用声明的混淆对；
    检测框在帧内平移并缩放，每帧以presence的概率出现。

    Args:
        seed: 随机种子，同时写入场景
        frame_count: 帧数
        frame_size: (宽, 高)
        track_count: 轨迹数
        labels: 未混淆轨迹可用的标签
        confusions: 可用的(真实, 输出)混淆对
        confusion_probability: 轨迹使用混淆对的概率
        presence: 轨迹在每帧出现的概率

    Returns:
        满足全部场景不变量的MockScenario
    """
    if frame_count < 0 or track_count < 0:
        raise ValueError(f"帧数和轨迹数不能为负: frames={frame_count}, tracks={track_count}")
    if not labels:
        raise ValueError("标签列表不能为空")
    width, height = frame_size
    rng = np.random.default_rng(seed)

    tracks = []
    for track_id in range(track_count):
        if confusions and rng.random() < confusion_probability:
            true_label, emitted_label = confusions[int(rng.integers(len(confusions)))]
        else:
            true_label = emitted_label = labels[int(rng.integers(len(labels)))]
        box_w = float(rng.uniform(0.08, 0.25) * width)
        box_h = float(rng.uniform(0.08, 0.25) * height)
        tracks.append({
            "id": track_id,
            "true": true_label,
            "emitted": emitted_label,
            "size": (box_w, box_h),
            "center": np.array([rng.uniform(0, width), rng.uniform(0, height)]),
            "velocity": rng.normal(0.0, 0.01, size=2) * np.array([width, height]),
        })

    per_frame: List[List[ScriptedDetection]] = [[] for _ in range(frame_count)]
    for frame_index in range(frame_count):
        used_boxes = set()
        for track in tracks:
            scale = float(rng.uniform(0.8, 1.2))
            present = rng.random() < presence
            confidence = round(float(rng.uniform(0.5, 0.99)), 3)
            track["center"] = track["center"] + track["velocity"]
            if not present:
                continue

            half_w = min(track["size"][0] * scale, width) / 2
            half_h = min(track["size"][1] * scale, height) / 2
            cx = float(np.clip(track["center"][0], half_w, width - half_w))
            cy = float(np.clip(track["center"][1], half_h, height - half_h))
            box = BoundingBox(round(cx - half_w, 1), round(cy - half_h, 1),
                              round(cx + half_w, 1), round(cy + half_h, 1))
            if box in used_boxes or not box.is_within(width, height):
                continue
            used_boxes.add(box)

            per_frame[frame_index].append(ScriptedDetection(
                frame_index=frame_index,
                box=box,
                true_label=track["true"],
                emitted_label=track["emitted"],
                confidence=confidence,
                track_id=track["id"],
            ))

    used_pairs = frozenset(
        (track["true"], track["emitted"]) for track in tracks if track["true"] != track["emitted"]
    )
    classifier_labels = sorted(set(labels).union(*confusions))
    return MockScenario(
        seed=seed,
        frame_count=frame_count,
        frame_size=(width, height),
        script=tuple(tuple(frame_script) for frame_script in per_frame),
        confusions=frozenset(tuple(pair) for pair in confusions) | used_pairs,
        classifier_labels=tuple(classifier_labels),
    )


def mock_feature_store(matrix: SimilarityMatrix, samples_per_class: int = 8,
                       dimension: Optional[int] = None, seed: int = 0,
                       noise: float = 0.05) -> FeatureStore:
    """合成一个特征存储，使其各类质心的余弦距离复现给定矩阵

    质心取Gram矩阵 1 - D 的Cholesky分解的行向量（单位长度）；样本在质心两侧
    沿额外的正交维度成对扰动，因此类均值恰好等于质心。

    Raises:
        ValueError: 非余弦矩阵、1 - D不正定或维度不足
    """
    if matrix.metric is not DistanceMetric.COSINE:
        raise ValueError(f"只能复现余弦距离矩阵，实际: {matrix.metric.value}")
    if samples_per_class < 1:
        raise ValueError(f"每类样本数至少为1: {samples_per_class}")

    n = len(matrix.labels)
    dimension = dimension or max(2 * n, 8)
    if dimension <= n:
        raise ValueError(f"维度 {dimension} 必须大于类别数 {n}")

    gram = 1.0 - matrix.distances
    try:
        factor = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as e:
        raise ValueError("距离矩阵无法由单位向量实现（1 - D 不正定）") from e

    rng = np.random.default_rng(seed)
    records = []
    for row, label in enumerate(matrix.labels):
        centroid = np.zeros(dimension)
        centroid[:n] = factor[row]
        offsets = []
        for _ in range(samples_per_class // 2):
            offset = np.zeros(dimension)
            offset[n:] = rng.normal(0.0, noise, size=dimension - n)
            offsets.extend([offset, -offset])
        if samples_per_class % 2:
            offsets.append(np.zeros(dimension))
        for index, offset in enumerate(offsets):
            records.append(make_record(label, f"{label}-{index:03d}", centroid + offset))

    return FeatureStore.from_records(records, dimension)


def label_accuracy(predictions: Sequence[PredictionObject], scenario: MockScenario) -> Dict[str, Any]:
    """对照脚本真实标签统计校正前后的标签准确率

    检测与脚本按帧内位置对应（流水线不改变检测顺序）。没有检测时准确率记为1.0。
    """
    total = before = after = 0
    for prediction in predictions:
        script = scenario.detections_for(prediction.frame_index)
        if len(script) != len(prediction.detections):
            raise ValueError(f"第 {prediction.frame_index} 帧的检测数与脚本不符")
        for scripted, detection in zip(script, prediction.detections):
            total += 1
            before += scripted.emitted_label == scripted.true_label
            after += detection.class_label == scripted.true_label

    return {
        "detections": total,
        "before": before / total if total else 1.0,
        "after": after / total if total else 1.0,
    }


# 车辆类别质心的余弦距离参考值：Bus/Car/Truck为基础类别，Van为扩展类别
VEHICLE_LABELS = ("Bus", "Car", "Truck", "Van")
VEHICLE_DISTANCES = {
    ("Van", "Truck"): 0.0292,
    ("Van", "Car"): 0.0378,
    ("Van", "Bus"): 0.0468,
    ("Bus", "Truck"): 0.0314,
    ("Car", "Truck"): 0.0685,
    ("Bus", "Car"): 0.0977,
}


def vehicle_similarity_matrix() -> SimilarityMatrix:
    """车辆参考距离矩阵，配合mock_feature_store生成可复现的特征文件"""
    return SimilarityMatrix.from_pairs(VEHICLE_LABELS, VEHICLE_DISTANCES, DistanceMetric.COSINE)
