"""
轨迹校正模块

基于跟踪器输出的离线校正：每条轨迹选取面积最大的检测框作为最佳裁剪，
对兼容类别的轨迹只调用一次分类器，并把结果回写到该轨迹的所有帧。
"""

import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .exceptions import DuplicateFramePerTrack, MalformedRecord, MissingFrame
from .inference_engine import (
    BoundingBox,
    ClassifierInterface,
    DetectorInterface,
    Frame,
    crop_box,
    ensure_label_coverage,
)
from .similarity import CompatibilityMap
from .utils import iter_jsonl, write_json, write_jsonl
from .validators import finite_floats, validate_tracked_line


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackedDetection:
    """带轨迹ID的检测结果"""
    frame_index: int
    track_id: int
    box: BoundingBox
    class_label: str
    confidence: float
    corrected: bool = False

    def __post_init__(self) -> None:
        if self.frame_index < 0 or self.track_id < 0:
            raise ValueError(f"帧序号和轨迹ID不能为负: frame={self.frame_index}, track={self.track_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"置信度必须在[0, 1]: {self.confidence}")

    def to_record(self) -> Dict[str, Any]:
        return {
            "frame": self.frame_index,
            "track": self.track_id,
            "box": self.box.to_list(),
            "label": self.class_label,
            "confidence": self.confidence,
            "corrected": self.corrected,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "TrackedDetection":
        return cls(
            frame_index=int(record["frame"]),
            track_id=int(record["track"]),
            box=BoundingBox.from_list(record["box"]),
            class_label=str(record["label"]),
            confidence=float(record["confidence"]),
            corrected=bool(record.get("corrected", False)),
        )


@dataclass(frozen=True)
class TrackDecision:
    """单条轨迹的校正决定"""
    frame_index: int
    old_label: str
    new_label: str
    confidence: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame": self.frame_index,
            "old_label": self.old_label,
            "new_label": self.new_label,
            "confidence": self.confidence,
        }


@dataclass
class TrackCorrectionResult:
    """轨迹校正结果"""
    corrected: List[TrackedDetection] = field(default_factory=list)
    tracks_examined: int = 0
    classifier_invocations: int = 0
    per_track_decision: Dict[int, TrackDecision] = field(default_factory=dict)

    @property
    def detections_corrected(self) -> int:
        return sum(1 for detection in self.corrected if detection.corrected)

    def to_report(self) -> Dict[str, Any]:
        """生成侧车报告（不含检测列表）"""
        return {
            "tracks_examined": self.tracks_examined,
            "classifier_invocations": self.classifier_invocations,
            "detections": len(self.corrected),
            "detections_corrected": self.detections_corrected,
            "per_track_decision": {
                str(track_id): decision.to_dict()
                for track_id, decision in sorted(self.per_track_decision.items())
            },
        }


def group_by_track(detections: Iterable[TrackedDetection]) -> Dict[int, List[TrackedDetection]]:
    """按轨迹ID分组，并检查同一轨迹在同一帧只出现一次

    Raises:
        DuplicateFramePerTrack: 同一(轨迹, 帧)出现多次
    """
    tracks: Dict[int, List[TrackedDetection]] = {}
    seen = set()
    for detection in detections:
        key = (detection.track_id, detection.frame_index)
        if key in seen:
            raise DuplicateFramePerTrack(detection.track_id, detection.frame_index)
        seen.add(key)
        tracks.setdefault(detection.track_id, []).append(detection)
    return tracks


def best_crop_per_track(detections: Sequence[TrackedDetection]) -> Dict[int, Tuple[int, BoundingBox]]:
    """为每条轨迹选取面积最大的检测框

    面积相同时取帧序号最小的一个。

    Returns:
        轨迹ID -> (帧序号, 边界框)，按轨迹ID升序

    Raises:
        DuplicateFramePerTrack: 同一(轨迹, 帧)出现多次
    """
    best: Dict[int, Tuple[int, BoundingBox]] = {}
    for track_id, track in sorted(group_by_track(detections).items()):
        chosen = min(track, key=lambda detection: (-detection.box.area, detection.frame_index))
        best[track_id] = (chosen.frame_index, chosen.box)
    return best


def majority_label(track: Sequence[TrackedDetection]) -> str:
    """轨迹的多数标签

    票数相同时取置信度最高的检测所带的标签，再相同取最早的帧。
    """
    votes = Counter(detection.class_label for detection in track)
    top = max(votes.values())
    tied = {label for label, count in votes.items() if count == top}
    if len(tied) == 1:
        return next(iter(tied))
    leader = min(
        (detection for detection in track if detection.class_label in tied),
        key=lambda detection: (-detection.confidence, detection.frame_index),
    )
    return leader.class_label


def correct_tracks(detections: Sequence[TrackedDetection], frames: Mapping[int, Frame],
                   classifier: ClassifierInterface, compat: CompatibilityMap,
                   pad_fraction: float = 0.0, max_workers: int = 1) -> TrackCorrectionResult:
    """按轨迹校正检测标签

    多数标签属于兼容基础类别的轨迹在最佳裁剪上分类一次，结果覆盖该轨迹每一帧的
    标签和置信度；其余轨迹原样输出。输出保持输入顺序，边界框、帧序号和轨迹ID不变。

    Args:
        detections: 跟踪器输出
        frames: 帧序号 -> 帧
        classifier: 分类器
        compat: 兼容类别映射
        pad_fraction: 裁剪扩展比例
        max_workers: 并行分类的线程数，结果按轨迹ID确定性汇总

    Raises:
        DuplicateFramePerTrack: 同一(轨迹, 帧)出现多次
        MissingFrame: 兼容轨迹的最佳裁剪帧不存在
        LabelSetMismatch: 分类器标签集合不满足要求
        InvalidBox: 最佳裁剪超出帧范围
    """
    if max_workers < 1:
        raise ValueError(f"并行数至少为1: {max_workers}")

    tracks = group_by_track(detections)
    compatible = compat.base_labels()
    if any(majority_label(track) in compatible for track in tracks.values()):
        ensure_label_coverage(classifier, compat)

    best = best_crop_per_track(detections)
    jobs: List[Tuple[int, str, Frame, BoundingBox]] = []
    for track_id in sorted(tracks):
        label = majority_label(tracks[track_id])
        if label not in compatible:
            continue
        frame_index, box = best[track_id]
        frame = frames.get(frame_index)
        if frame is None:
            raise MissingFrame(frame_index)
        jobs.append((track_id, label, frame, box))

    def classify(job: Tuple[int, str, Frame, BoundingBox]) -> Tuple[str, float]:
        _, _, frame, box = job
        label, confidence = classifier.classify(frame, crop_box(frame, box, pad_fraction))
        return label, float(confidence)

    if max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="track-correct") as executor:
            outcomes = list(executor.map(classify, jobs))
    else:
        outcomes = [classify(job) for job in jobs]

    decisions: Dict[int, TrackDecision] = {}
    for (track_id, old_label, frame, _), (new_label, confidence) in zip(jobs, outcomes):
        decisions[track_id] = TrackDecision(frame.index, old_label, new_label, confidence)
        logger.debug(f"轨迹 {track_id}: {old_label} -> {new_label} ({confidence:.2f})")

    corrected = [
        replace(detection, class_label=decisions[detection.track_id].new_label,
                confidence=decisions[detection.track_id].confidence, corrected=True)
        if detection.track_id in decisions else detection
        for detection in detections
    ]

    result = TrackCorrectionResult(
        corrected=corrected,
        tracks_examined=len(tracks),
        classifier_invocations=len(jobs),
        per_track_decision=decisions,
    )
    logger.info(f"轨迹校正完成，轨迹数: {result.tracks_examined}, "
                f"分类调用: {result.classifier_invocations}, 校正检测: {result.detections_corrected}")
    return result


def run_tracked(frames: Sequence[Frame], detector: DetectorInterface, classifier: ClassifierInterface,
                compat: CompatibilityMap, detections: Sequence[TrackedDetection],
                pad_fraction: float = 0.0, max_workers: int = 1) -> Tuple[TrackCorrectionResult, float]:
    """轨迹模式的端到端执行，返回校正结果和墙钟时间

    跟踪结果由调用方预先给出，逐帧调用检测器只是为了把检测耗时计入墙钟时间，
    检测输出被丢弃。随后按轨迹校正。
    """
    start_time = time.perf_counter()
    for frame in frames:
        detector.detect(frame)
    result = correct_tracks(detections, {frame.index: frame for frame in frames},
                            classifier, compat, pad_fraction, max_workers)
    return result, time.perf_counter() - start_time


def load_tracked_detections(path: Union[str, Path]) -> List[TrackedDetection]:
    """读取跟踪检测JSONL文件

    Raises:
        MalformedRecord: 记录格式错误（带行号）
    """
    detections: List[TrackedDetection] = []
    for line_number, text in iter_jsonl(path):
        try:
            document = json.loads(text)
        except ValueError as e:
            raise MalformedRecord(line_number, f"无效的JSON: {e}") from e
        validate_tracked_line(line_number, document)

        if finite_floats([*document["box"], document["confidence"]]) is None:
            raise MalformedRecord(line_number, "包含非有限数值或超出双精度范围的数值")
        detections.append(TrackedDetection.from_record(document))

    logger.info(f"读取跟踪检测: {path}, 数量: {len(detections)}")
    return detections


def write_tracked_detections(path: Union[str, Path], detections: Iterable[TrackedDetection]) -> int:
    """写入跟踪检测JSONL文件（带corrected字段）"""
    return write_jsonl(path, (detection.to_record() for detection in detections))


def write_track_report(path: Union[str, Path], result: TrackCorrectionResult,
                       extra: Optional[Dict[str, Any]] = None) -> None:
    """写入轨迹校正侧车报告"""
    report = result.to_report()
    if extra:
        report.update(extra)
    write_json(path, report)
