"""
推理引擎模块

检测器 + 分类器的双并行推理：检测器处理第k+1帧的同时，校正器处理第k帧，
两者只通过一个单槽共享内存(PipelineSlot)交接。另提供顺序执行版本作为确定性基准。
"""

import logging
import math
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from PIL import Image, UnidentifiedImageError

from .exceptions import FrameMismatch, InvalidBox, LabelSetMismatch, StageFailure
from .similarity import CompatibilityMap


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Frame:
    """视频帧"""
    index: int
    width: int
    height: int
    # 像素数据或模拟令牌，引擎不解析
    payload: bytes = b""

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"帧序号不能为负: {self.index}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"帧尺寸必须为正: {self.width}x{self.height}")


@dataclass(frozen=True)
class BoundingBox:
    """像素坐标边界框 (x1, y1, x2, y2)"""
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def is_within(self, width: float, height: float) -> bool:
        """0 <= x1 < x2 <= width 且 0 <= y1 < y2 <= height"""
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(value) for value in coords):
            return False
        return 0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height

    def validate(self, frame: Frame) -> None:
        """检查边界框位于帧内

        Raises:
            InvalidBox: 坐标无效或越界
        """
        if not self.is_within(frame.width, frame.height):
            raise InvalidBox(
                f"第 {frame.index} 帧的边界框 {self.to_list()} 超出 {frame.width}x{frame.height}",
                frame_index=frame.index,
            )

    def iou(self, other: "BoundingBox") -> float:
        """交并比"""
        inter_w = min(self.x2, other.x2) - max(self.x1, other.x1)
        inter_h = min(self.y2, other.y2) - max(self.y1, other.y1)
        if inter_w <= 0 or inter_h <= 0:
            return 0.0
        intersection = inter_w * inter_h
        return intersection / (self.area + other.area - intersection)

    def to_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError(f"边界框需要4个坐标，实际: {len(values)}")
        try:
            return cls(*(float(value) for value in values))
        except OverflowError as e:
            raise ValueError("边界框坐标超出双精度范围") from e


@dataclass(frozen=True)
class Detection:
    """单个检测结果"""
    box: BoundingBox
    class_label: str
    confidence: float
    # 分类器覆盖了标签或置信度时为True
    corrected: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"置信度必须在[0, 1]: {self.confidence}")

    def to_record(self) -> Dict[str, Any]:
        return {
            "box": self.box.to_list(),
            "label": self.class_label,
            "confidence": self.confidence,
            "corrected": self.corrected,
        }


@dataclass(frozen=True)
class PredictionObject:
    """单帧的检测输出"""
    frame_index: int
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_record(self) -> Dict[str, Any]:
        return {
            "frame": self.frame_index,
            "detections": [detection.to_record() for detection in self.detections],
        }


class DetectorInterface(ABC):
    """检测器接口：对同一帧内容输出确定"""

    @abstractmethod
    def detect(self, frame: Frame) -> PredictionObject:
        raise NotImplementedError


class ClassifierInterface(ABC):
    """分类器接口：对同一(帧内容, 区域)输出确定，标签属于label_set()"""

    @abstractmethod
    def classify(self, frame: Frame, box: BoundingBox) -> Tuple[str, float]:
        raise NotImplementedError

    @abstractmethod
    def label_set(self) -> List[str]:
        raise NotImplementedError


class SlotState(Enum):
    """共享槽状态"""
    EMPTY = "empty"
    PRODUCED = "produced"
    CONSUMED = "consumed"


class PipelineSlot:
    """检测器与校正器之间的单槽共享内存

    检测器在槽为PRODUCED时阻塞（不丢帧）；校正器取出内容后槽仍保持PRODUCED，
    直到release()才变为CONSUMED，因此两个阶段最多相差一帧。
    """

    def __init__(self) -> None:
        self._condition = threading.Condition()
        self._frame: Optional[Frame] = None
        self._prediction: Optional[PredictionObject] = None
        self._state = SlotState.EMPTY
        self._closed = False
        self._aborted = False

        # 状态机计数器
        self.produced_count = 0
        self.consumed_count = 0
        self.overwrite_violations = 0
        self.double_consume_violations = 0

    @property
    def state(self) -> SlotState:
        with self._condition:
            return self._state

    def put(self, frame: Frame, prediction: PredictionObject) -> bool:
        """写入一帧及其预测，槽未被消费时阻塞

        Returns:
            False表示流水线已中止，未写入
        """
        with self._condition:
            while self._state is SlotState.PRODUCED and not self._aborted:
                self._condition.wait()
            if self._aborted:
                return False
            if self._state is SlotState.PRODUCED:
                self.overwrite_violations += 1
            self._frame = frame
            self._prediction = prediction
            self._state = SlotState.PRODUCED
            self.produced_count += 1
            self._condition.notify_all()
            return True

    def take(self) -> Optional[Tuple[Frame, PredictionObject]]:
        """等待并读取已写入的内容；处理完后必须调用release()

        Returns:
            None表示输入已结束且槽已清空，或流水线已中止
        """
        with self._condition:
            while self._state is not SlotState.PRODUCED and not self._closed:
                self._condition.wait()
            if self._aborted or self._state is not SlotState.PRODUCED:
                return None
            return self._frame, self._prediction

    def release(self) -> None:
        """标记当前内容已消费，唤醒检测器"""
        with self._condition:
            if self._state is not SlotState.PRODUCED:
                self.double_consume_violations += 1
                return
            self._frame = None
            self._prediction = None
            self._state = SlotState.CONSUMED
            self.consumed_count += 1
            self._condition.notify_all()

    def close(self) -> None:
        """检测器结束：不再写入，校正器处理完槽内剩余内容后退出"""
        with self._condition:
            self._closed = True
            self._condition.notify_all()

    def abort(self) -> None:
        """校正器失败：唤醒并停止检测器"""
        with self._condition:
            self._aborted = True
            self._closed = True
            self._condition.notify_all()

    def counters(self) -> Dict[str, int]:
        with self._condition:
            return {
                "produced": self.produced_count,
                "consumed": self.consumed_count,
                "overwritten_unconsumed": self.overwrite_violations,
                "double_consumed": self.double_consume_violations,
            }


@dataclass
class PipelineStats:
    """流水线运行统计"""
    mode: str = "sequential"
    frames_processed: int = 0
    total_detections: int = 0
    classifier_invocations: int = 0
    detections_corrected: int = 0
    wall_time: float = 0.0
    per_stage_busy_time: Dict[str, float] = field(
        default_factory=lambda: {"detector": 0.0, "corrector": 0.0}
    )
    slot_events: Dict[str, int] = field(default_factory=dict)

    def record(self, raw: PredictionObject, corrected: PredictionObject, compatible: frozenset) -> None:
        """累计一帧的计数"""
        self.frames_processed += 1
        self.total_detections += len(raw.detections)
        self.classifier_invocations += sum(
            1 for detection in raw.detections if detection.class_label in compatible
        )
        self.detections_corrected += sum(1 for detection in corrected.detections if detection.corrected)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "mode": self.mode,
            "frames_processed": self.frames_processed,
            "total_detections": self.total_detections,
            "classifier_invocations": self.classifier_invocations,
            "detections_corrected": self.detections_corrected,
            "wall_time": round(self.wall_time, 3),
            "per_stage_busy_time": {stage: round(value, 3) for stage, value in self.per_stage_busy_time.items()},
        }
        if self.slot_events:
            data["slot_events"] = dict(self.slot_events)
        return data


def ensure_label_coverage(classifier: ClassifierInterface, compat: CompatibilityMap) -> None:
    """检查分类器标签集合覆盖全部兼容基础类别和扩展类别

    Raises:
        LabelSetMismatch: 存在分类器无法输出的必需标签
    """
    available = set(classifier.label_set())
    missing = [label for label in compat.classifier_labels() if label not in available]
    if missing:
        raise LabelSetMismatch(missing)


def crop_box(frame: Frame, box: BoundingBox, pad_fraction: float = 0.0) -> BoundingBox:
    """按宽高比例向四周扩展边界框，并裁剪到帧范围内

    Raises:
        InvalidBox: 原始边界框不在帧内
    """
    if not math.isfinite(pad_fraction) or pad_fraction < 0:
        raise ValueError(f"扩展比例必须为非负数: {pad_fraction}")
    box.validate(frame)
    if pad_fraction == 0:
        return box

    dx = box.width * pad_fraction
    dy = box.height * pad_fraction
    return BoundingBox(
        max(0.0, box.x1 - dx),
        max(0.0, box.y1 - dy),
        min(float(frame.width), box.x2 + dx),
        min(float(frame.height), box.y2 + dy),
    )


def correct_prediction(frame: Frame, prediction: PredictionObject, classifier: ClassifierInterface,
                       compat: CompatibilityMap, pad_fraction: float = 0.0) -> PredictionObject:
    """用分类器校正一帧中属于兼容基础类别的检测

    兼容类别的检测一律由分类器重新打分（即使标签不变），其余检测原样保留；
    边界框和检测顺序不变。

    Raises:
        FrameMismatch: 预测不属于该帧
        LabelSetMismatch: 分类器标签集合不满足要求
        InvalidBox: 边界框越界
    """
    if prediction.frame_index != frame.index:
        raise FrameMismatch(f"预测属于第 {prediction.frame_index} 帧，但输入的是第 {frame.index} 帧")

    ensure_label_coverage(classifier, compat)
    available = set(classifier.label_set())
    compatible = compat.base_labels()

    corrected = []
    for detection in prediction.detections:
        detection.box.validate(frame)
        if detection.class_label not in compatible:
            corrected.append(detection)
            continue

        region = crop_box(frame, detection.box, pad_fraction)
        label, confidence = classifier.classify(frame, region)
        if label not in available:
            raise LabelSetMismatch([label])
        corrected.append(Detection(detection.box, label, float(confidence), corrected=True))
        logger.debug(f"第 {frame.index} 帧: {detection.class_label} -> {label} ({confidence:.2f})")

    return PredictionObject(frame.index, tuple(corrected))


def _check_frame(frame: Frame, expected_index: int) -> None:
    if frame.index != expected_index:
        raise FrameMismatch(f"帧序号不连续: 期望 {expected_index}, 实际 {frame.index}")


def _check_prediction(frame: Frame, prediction: PredictionObject) -> None:
    if prediction.frame_index != frame.index:
        raise FrameMismatch(f"检测器为第 {frame.index} 帧返回了第 {prediction.frame_index} 帧的预测")


def run_sequential(frames: Iterable[Frame], detector: DetectorInterface, classifier: ClassifierInterface,
                   compat: CompatibilityMap,
                   pad_fraction: float = 0.0) -> Tuple[List[PredictionObject], PipelineStats]:
    """顺序执行：逐帧检测后立即校正，作为双并行模式的确定性基准

    Raises:
        LabelSetMismatch: 启动前的标签集合检查失败
        StageFailure: 任一阶段失败，携带已完成的输出
    """
    ensure_label_coverage(classifier, compat)
    compatible = compat.base_labels()
    stats = PipelineStats(mode="sequential")
    outputs: List[PredictionObject] = []
    start_time = time.perf_counter()

    for expected_index, frame in enumerate(frames):
        stage = "detector"
        try:
            _check_frame(frame, expected_index)
            stage_start = time.perf_counter()
            prediction = detector.detect(frame)
            stats.per_stage_busy_time["detector"] += time.perf_counter() - stage_start
            _check_prediction(frame, prediction)

            stage = "corrector"
            stage_start = time.perf_counter()
            corrected = correct_prediction(frame, prediction, classifier, compat, pad_fraction)
            stats.per_stage_busy_time["corrector"] += time.perf_counter() - stage_start
        except Exception as e:
            stats.wall_time = time.perf_counter() - start_time
            logger.error(f"顺序执行在第 {expected_index} 帧的 {stage} 阶段失败: {e}")
            raise StageFailure(stage, expected_index, e, outputs, stats) from e

        stats.record(prediction, corrected, compatible)
        outputs.append(corrected)

    stats.wall_time = time.perf_counter() - start_time
    logger.info(f"顺序执行完成，帧数: {stats.frames_processed}, 分类调用: {stats.classifier_invocations}, "
                f"耗时: {stats.wall_time:.3f}秒")
    return outputs, stats


def run_dual_parallel(frames: Iterable[Frame], detector: DetectorInterface, classifier: ClassifierInterface,
                      compat: CompatibilityMap,
                      pad_fraction: float = 0.0) -> Tuple[List[PredictionObject], PipelineStats]:
    """双并行执行：检测线程与校正线程相差一帧，经单槽交接

    输出与run_sequential逐项一致，按帧序输出。失败时先排空在途帧再抛出。

    Raises:
        LabelSetMismatch: 启动前的标签集合检查失败
        StageFailure: 任一阶段失败，携带已完成的输出
    """
    ensure_label_coverage(classifier, compat)
    compatible = compat.base_labels()
    stats = PipelineStats(mode="dual_parallel")
    slot = PipelineSlot()
    outputs: List[PredictionObject] = []
    failures: List[Tuple[str, int, BaseException]] = []
    busy = {"detector": 0.0, "corrector": 0.0}

    def detector_stage() -> None:
        expected_index = 0
        try:
            for expected_index, frame in enumerate(frames):
                _check_frame(frame, expected_index)
                stage_start = time.perf_counter()
                prediction = detector.detect(frame)
                busy["detector"] += time.perf_counter() - stage_start
                _check_prediction(frame, prediction)
                if not slot.put(frame, prediction):
                    logger.debug(f"流水线已中止，检测器在第 {expected_index} 帧停止")
                    break
        except Exception as e:
            logger.error(f"检测阶段在第 {expected_index} 帧失败: {e}")
            failures.append(("detector", expected_index, e))
        finally:
            slot.close()

    def corrector_stage() -> None:
        frame_index = 0
        try:
            while True:
                item = slot.take()
                if item is None:
                    break
                frame, prediction = item
                frame_index = frame.index
                stage_start = time.perf_counter()
                corrected = correct_prediction(frame, prediction, classifier, compat, pad_fraction)
                busy["corrector"] += time.perf_counter() - stage_start
                slot.release()

                # 释放锁之后再输出
                stats.record(prediction, corrected, compatible)
                outputs.append(corrected)
        except Exception as e:
            logger.error(f"校正阶段在第 {frame_index} 帧失败: {e}")
            failures.append(("corrector", frame_index, e))
            slot.abort()

    start_time = time.perf_counter()
    with ThreadPoolExecutor(max_workers=2, thread_name_prefix="dual-parallel") as executor:
        futures = [executor.submit(detector_stage), executor.submit(corrector_stage)]
        for future in futures:
            future.result()

    stats.wall_time = time.perf_counter() - start_time
    stats.per_stage_busy_time = busy
    stats.slot_events = slot.counters()

    if failures:
        stage, frame_index, cause = min(failures, key=lambda failure: failure[1])
        raise StageFailure(stage, frame_index, cause, outputs, stats) from cause

    logger.info(f"双并行执行完成，帧数: {stats.frames_processed}, 分类调用: {stats.classifier_invocations}, "
                f"耗时: {stats.wall_time:.3f}秒")
    return outputs, stats


def load_frame_directory(path: Union[str, Path]) -> List[Frame]:
    """按文件名字典序读取目录中的图像作为帧序列，无法识别的文件被跳过"""
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"帧目录不存在: {directory}")

    frames: List[Frame] = []
    for file_path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            with Image.open(file_path) as image:
                width, height = image.size
        except UnidentifiedImageError:
            logger.warning(f"跳过无法识别的文件: {file_path}")
            continue
        frames.append(Frame(len(frames), width, height, file_path.read_bytes()))

    logger.info(f"从 {directory} 读取 {len(frames)} 帧")
    return frames
