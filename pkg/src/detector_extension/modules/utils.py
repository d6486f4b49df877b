"""
工具函数模块

提供通用的工具函数，包括日志设置、错误格式化和JSON/JSONL读写
"""

import json
import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

import structlog


PACKAGE_LOGGER = "detector_extension"


def setup_logging(config: Any) -> logging.Logger:
    """设置日志系统

    Args:
        config: 配置对象

    Returns:
        配置好的logger
    """
    log_level = getattr(config.logging, 'level', 'INFO').upper()
    log_format = getattr(config.logging, 'format', 'detailed')

    # 定义日志格式
    if log_format == 'simple':
        formatter = logging.Formatter('%(levelname)s - %(message)s')
    elif log_format == 'structured':
        formatter = structured_formatter()
    else:  # detailed
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(getattr(logging, log_level, logging.INFO))
    logger.propagate = False

    # 清除现有处理器
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    # 控制台处理器，输出到stderr，stdout留给命令结果
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(getattr(logging, log_level, logging.INFO))
    logger.addHandler(console_handler)

    if getattr(config.logging, 'enable_file_logging', False):
        log_dir = Path(getattr(config.logging, 'log_dir', './logs'))
        log_dir.mkdir(parents=True, exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            log_dir / getattr(config.logging, 'log_file', 'extension.log'),
            maxBytes=getattr(config.logging, 'log_max_size', 100 * 1024 * 1024),
            backupCount=getattr(config.logging, 'log_backup_count', 10),
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(getattr(logging, log_level, logging.INFO))
        logger.addHandler(file_handler)

        error_handler = logging.handlers.RotatingFileHandler(
            log_dir / getattr(config.logging, 'error_log_file', 'error.log'),
            maxBytes=50 * 1024 * 1024,  # 50MB
            backupCount=5,
            encoding='utf-8'
        )
        error_handler.setFormatter(formatter)
        error_handler.setLevel(logging.ERROR)
        logger.addHandler(error_handler)

    logger.debug(f"日志系统初始化完成，级别: {log_level}")
    return logger


def structured_formatter() -> logging.Formatter:
    """结构化(JSON)日志格式器，供setup_logging和logging.yaml使用"""
    return structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
        ],
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(ensure_ascii=False),
        ],
    )


def format_error_response(error_code: str,
                          error_message: str,
                          details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """格式化错误响应

    Args:
        error_code: 错误代码
        error_message: 错误消息
        details: 额外的错误详情

    Returns:
        格式化的错误响应
    """
    response = {
        "success": False,
        "error": {
            "code": error_code,
            "message": error_message,
        }
    }

    if details:
        response["error"]["details"] = details

    return response


def dumps_record(obj: Any) -> str:
    """序列化单条记录为紧凑的JSON文本（键顺序保持插入顺序）"""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: Union[str, Path], records: Iterable[Dict[str, Any]]) -> int:
    """写入JSONL文件

    Returns:
        写入的记录数
    """
    count = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(dumps_record(record))
            f.write("\n")
            count += 1
    return count


def iter_jsonl(path: Union[str, Path]) -> Iterator[tuple]:
    """逐行读取JSONL文件，跳过空行

    Yields:
        (行号, 原始文本)，行号从1开始
    """
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if line.strip():
                yield line_number, line


def write_json(path: Union[str, Path], data: Any) -> None:
    """写入格式化的JSON文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2)
        f.write("\n")


def read_json(path: Union[str, Path]) -> Any:
    """读取JSON文件"""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def parse_label_list(value: Optional[str]) -> List[str]:
    """解析逗号分隔的类别列表，去除空白和空项"""
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]
