"""
测试用的检测器/分类器桩实现
"""

import threading
from typing import Dict, List, Optional, Sequence, Tuple

from detector_extension.modules.inference_engine import (
    BoundingBox,
    ClassifierInterface,
    Detection,
    DetectorInterface,
    Frame,
    PredictionObject,
)

BASE_CLASSES = ["Bus", "Car", "Truck"]
EXTENSION_CLASSES = ["Van"]
CLASSIFIER_LABELS = ["Bus", "Car", "Truck", "Van"]


class FixedClassifier(ClassifierInterface):
    """总是返回同一结果的分类器，记录每次调用"""

    def __init__(self, label: str, confidence: float, labels: Sequence[str]):
        self.label = label
        self.confidence = confidence
        self.labels = list(labels)
        self.calls: List[Tuple[int, BoundingBox]] = []
        self._lock = threading.Lock()

    def classify(self, frame: Frame, box: BoundingBox) -> Tuple[str, float]:
        with self._lock:
            self.calls.append((frame.index, box))
        return self.label, self.confidence

    def label_set(self) -> List[str]:
        return list(self.labels)


class EchoClassifier(FixedClassifier):
    """按(帧, 边界框)查表返回真实标签"""

    def __init__(self, truth: Dict[Tuple[int, Tuple[float, ...]], str], labels: Sequence[str],
                 confidence: float = 0.95):
        super().__init__("", confidence, labels)
        self.truth = truth

    def classify(self, frame: Frame, box: BoundingBox) -> Tuple[str, float]:
        super().classify(frame, box)
        return self.truth[(frame.index, tuple(box.to_list()))], self.confidence


class FailingClassifier(FixedClassifier):
    """在指定帧抛出异常的分类器"""

    def __init__(self, fail_at: int, labels: Sequence[str]):
        super().__init__("Van", 0.9, labels)
        self.fail_at = fail_at

    def classify(self, frame: Frame, box: BoundingBox) -> Tuple[str, float]:
        if frame.index == self.fail_at:
            raise RuntimeError(f"classifier failure at frame {frame.index}")
        return super().classify(frame, box)


class ScriptedDetector(DetectorInterface):
    """按帧序号返回预先给定检测的检测器"""

    def __init__(self, detections: Optional[Dict[int, List[Detection]]] = None,
                 fail_at: Optional[int] = None):
        self.detections = detections or {}
        self.fail_at = fail_at

    def detect(self, frame: Frame) -> PredictionObject:
        if frame.index == self.fail_at:
            raise RuntimeError(f"detector failure at frame {frame.index}")
        return PredictionObject(frame.index, tuple(self.detections.get(frame.index, ())))


def make_frames(count: int, width: int = 100, height: int = 100) -> List[Frame]:
    return [Frame(index, width, height, f"frame-{index}".encode()) for index in range(count)]


def detection(label: str, box: Sequence[float], confidence: float = 0.7) -> Detection:
    return Detection(BoundingBox.from_list(box), label, confidence)
