"""
异常定义模块

所有对外抛出的错误都继承自ExtensionError，携带稳定的错误代码和详情
"""

from typing import Any, Dict, List, Optional

from .utils import format_error_response


class ExtensionError(Exception):
    """扩展工具包基础异常"""

    error_code = "EXTENSION_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """转换为统一的错误响应格式"""
        return format_error_response(self.error_code, self.message, self.details or None)


# ---- feature_store ----

class MalformedRecord(ExtensionError):
    """特征文件中的记录格式错误"""

    error_code = "MALFORMED_RECORD"

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"第 {line_number} 行记录格式错误: {reason}",
                         {"line": line_number, "reason": reason})
        self.line_number = line_number


class DimensionMismatch(ExtensionError):
    """向量维度不一致"""

    error_code = "DIMENSION_MISMATCH"

    def __init__(self, expected: int, actual: int, line_number: Optional[int] = None,
                 context: str = ""):
        where = f"第 {line_number} 行" if line_number is not None else (context or "输入")
        super().__init__(f"{where}维度不匹配: 期望 {expected}, 实际 {actual}",
                         {"expected": expected, "actual": actual, "line": line_number})
        self.line_number = line_number


class ZeroVector(ExtensionError):
    """全零向量（余弦距离无定义）"""

    error_code = "ZERO_VECTOR"

    def __init__(self, class_label: str = "", sample_id: str = ""):
        if class_label or sample_id:
            message = f"类别 {class_label} 的样本 {sample_id} 是全零向量"
        else:
            message = "余弦距离不接受全零向量"
        super().__init__(message, {"class": class_label, "id": sample_id})


class EmptyStore(ExtensionError):
    """特征文件中没有任何记录"""

    error_code = "EMPTY_STORE"


# ---- similarity_core ----

class EmptyInput(ExtensionError):
    """输入为空"""

    error_code = "EMPTY_INPUT"


class DuplicateLabel(ExtensionError):
    """类别标签重复"""

    error_code = "DUPLICATE_LABEL"


class UnknownClass(ExtensionError):
    """类别不存在"""

    error_code = "UNKNOWN_CLASS"

    def __init__(self, labels: List[str]):
        super().__init__(f"未知类别: {', '.join(labels)}", {"labels": labels})
        self.labels = labels


class OverlappingSets(ExtensionError):
    """基础类别与扩展类别有交集"""

    error_code = "OVERLAPPING_SETS"


class NonPositiveThreshold(ExtensionError):
    """相似度阈值必须为正"""

    error_code = "NON_POSITIVE_THRESHOLD"


# ---- inference_engine / tracker_correction ----

class LabelSetMismatch(ExtensionError):
    """分类器标签集合无法覆盖所需类别"""

    error_code = "LABEL_SET_MISMATCH"

    def __init__(self, missing: List[str]):
        super().__init__(f"分类器标签集合缺少: {', '.join(missing)}", {"missing": missing})
        self.missing = missing


class InvalidBox(ExtensionError):
    """边界框超出帧范围或坐标无效"""

    error_code = "INVALID_BOX"

    def __init__(self, message: str, frame_index: Optional[int] = None):
        super().__init__(message, {"frame": frame_index})
        self.frame_index = frame_index


class FrameMismatch(ExtensionError):
    """预测对象与帧不对应，或帧序号不连续"""

    error_code = "FRAME_MISMATCH"


class StageFailure(ExtensionError):
    """流水线阶段失败，携带部分输出"""

    error_code = "STAGE_FAILURE"

    def __init__(self, stage: str, frame_index: Optional[int], cause: BaseException,
                 partial_outputs: Optional[List[Any]] = None, stats: Any = None):
        cause_code = getattr(cause, "error_code", type(cause).__name__)
        super().__init__(
            f"{stage} 阶段在第 {frame_index} 帧失败: {cause}",
            {"stage": stage, "frame": frame_index, "cause": cause_code},
        )
        self.stage = stage
        self.frame_index = frame_index
        self.cause = cause
        self.partial_outputs = partial_outputs or []
        self.stats = stats


class DuplicateFramePerTrack(ExtensionError):
    """同一轨迹在同一帧出现多次"""

    error_code = "DUPLICATE_FRAME_PER_TRACK"

    def __init__(self, track_id: int, frame_index: int):
        super().__init__(f"轨迹 {track_id} 在第 {frame_index} 帧有重复检测",
                         {"track": track_id, "frame": frame_index})


class MissingFrame(ExtensionError):
    """找不到轨迹引用的帧"""

    error_code = "MISSING_FRAME"

    def __init__(self, frame_index: int):
        super().__init__(f"找不到第 {frame_index} 帧", {"frame": frame_index})
        self.frame_index = frame_index


# ---- mock_backends ----

class MalformedScenario(ExtensionError):
    """场景文件格式错误"""

    error_code = "MALFORMED_SCENARIO"


class FrameOutOfRange(ExtensionError):
    """帧序号超出场景范围"""

    error_code = "FRAME_OUT_OF_RANGE"

    def __init__(self, frame_index: int, frame_count: int):
        super().__init__(f"帧序号 {frame_index} 超出范围 [0, {frame_count})",
                         {"frame": frame_index, "frame_count": frame_count})


class NoMatchingRegion(ExtensionError):
    """分类区域与任何脚本检测都不匹配"""

    error_code = "NO_MATCHING_REGION"


class MalformedCompatibility(ExtensionError):
    """兼容类别文件格式错误"""

    error_code = "MALFORMED_COMPATIBILITY"
