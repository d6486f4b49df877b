"""
验证器模块

提供外部输入的边界验证：特征记录行、场景文件、跟踪检测行、兼容类别文件
"""

import json
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Union

import jsonschema
from pydantic import BaseModel, ConfigDict, Field, StrictFloat, StrictInt, ValidationError

from .exceptions import (
    MalformedCompatibility,
    MalformedRecord,
    MalformedScenario,
)


logger = logging.getLogger(__name__)


def finite_float(value: Any) -> Optional[float]:
    """转换为双精度浮点数，非有限或超出范围时返回None"""
    try:
        number = float(value)
    except (OverflowError, TypeError, ValueError):
        return None
    return number if math.isfinite(number) else None


def finite_floats(values: Iterable[Any]) -> Optional[List[float]]:
    """逐项转换为双精度浮点数，任一项无效时返回None"""
    numbers: List[float] = []
    for value in values:
        number = finite_float(value)
        if number is None:
            return None
        numbers.append(number)
    return numbers


class FeatureLine(BaseModel):
    """特征文件的一行: {"class": ..., "id": ..., "vector": [...]}"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    class_label: str = Field(alias="class", min_length=1)
    sample_id: str = Field(alias="id", min_length=1)
    vector: List[Union[StrictInt, StrictFloat]] = Field(min_length=1)


def parse_feature_line(line_number: int, text: str) -> FeatureLine:
    """解析并验证一行特征记录

    Args:
        line_number: 行号（从1开始，用于错误报告）
        text: 原始行文本

    Returns:
        验证后的FeatureLine

    Raises:
        MalformedRecord: JSON无效、键不符或存在非有限数值
    """
    try:
        data = json.loads(text)
    except ValueError as e:
        raise MalformedRecord(line_number, f"无效的JSON: {e}") from e

    if not isinstance(data, dict):
        raise MalformedRecord(line_number, "记录必须是JSON对象")

    try:
        line = FeatureLine.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ()))
        raise MalformedRecord(line_number, f"{location}: {first.get('msg')}") from e

    vector = finite_floats(line.vector)
    if vector is None:
        raise MalformedRecord(line_number, "向量包含非有限数值或超出双精度范围的数值")

    return line.model_copy(update={"vector": vector})


_BOX_SCHEMA = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 4,
    "maxItems": 4,
}

SCENARIO_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["seed", "frames", "size", "script"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "frames": {"type": "integer", "minimum": 0},
        "size": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "script": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "box", "true", "emitted", "confidence"],
                "additionalProperties": False,
                "properties": {
                    "frame": {"type": "integer", "minimum": 0},
                    "box": _BOX_SCHEMA,
                    "true": {"type": "string", "minLength": 1},
                    "emitted": {"type": "string", "minLength": 1},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "track": {"type": "integer", "minimum": 0},
                },
            },
        },
        "confusions": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "string", "minLength": 1},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "classifier_labels": {
            "type": "array",
            "items": {"type": "string", "minLength": 1},
        },
    },
}

TRACKED_DETECTION_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["frame", "track", "box", "label", "confidence"],
    "additionalProperties": False,
    "properties": {
        "frame": {"type": "integer", "minimum": 0},
        "track": {"type": "integer", "minimum": 0},
        "box": _BOX_SCHEMA,
        "label": {"type": "string", "minLength": 1},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "corrected": {"type": "boolean"},
    },
}

COMPATIBILITY_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["threshold", "entries"],
    "additionalProperties": False,
    "properties": {
        "threshold": {"type": "number", "exclusiveMinimum": 0},
        "entries": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["base", "distance"],
                    "additionalProperties": False,
                    "properties": {
                        "base": {"type": "string", "minLength": 1},
                        "distance": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
    },
}


def _first_schema_error(document: Any, schema: Dict[str, Any]) -> str:
    """返回第一个schema错误的描述，没有错误时返回空字符串"""
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(document), key=lambda err: [str(part) for part in err.path])
    if not errors:
        return ""
    error = errors[0]
    location = "/".join(str(part) for part in error.path) or "<root>"
    return f"{location}: {error.message}"


def validate_scenario_document(document: Any) -> None:
    """验证场景文件结构

    Raises:
        MalformedScenario: 结构不符合场景schema
    """
    problem = _first_schema_error(document, SCENARIO_SCHEMA)
    if problem:
        raise MalformedScenario(f"场景文件格式错误: {problem}")


def validate_tracked_line(line_number: int, document: Any) -> None:
    """验证一行跟踪检测记录

    Raises:
        MalformedRecord: 结构不符合跟踪检测schema
    """
    problem = _first_schema_error(document, TRACKED_DETECTION_SCHEMA)
    if problem:
        raise MalformedRecord(line_number, problem)


def validate_compatibility_document(document: Any) -> None:
    """验证兼容类别文件结构

    Raises:
        MalformedCompatibility: 结构不符合兼容类别schema
    """
    problem = _first_schema_error(document, COMPATIBILITY_SCHEMA)
    if problem:
        raise MalformedCompatibility(f"兼容类别文件格式错误: {problem}")
