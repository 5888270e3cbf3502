"""
日志配置模块
提供统一的日志记录功能：控制台输出到 stderr（stdout 留给 CSV 结果），
可选按模块写入轮转日志文件。
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from app.config import settings

LOG_FORMAT = "%(asctime)s - [%(levelname)s] - [%(name)s:%(funcName)s:%(lineno)d] - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# 日志族 -> 日志文件
LOG_FILES = {
    "pipeline": "pipeline.log",
    "vibe": "pipeline.log",
    "semantic": "pipeline.log",
    "frame_io": "frame_io.log",
    "synth": "frame_io.log",
    "evaluation": "evaluation.log",
    "runner": "evaluation.log",
    "optimizer": "optimizer.log",
    "cli": "cli.log",
}


def setup_logger(
    name: str,
    log_file: Optional[str] = None,
    level: Optional[str] = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
) -> logging.Logger:
    """
    配置并返回一个日志记录器

    Args:
        name: 日志记录器名称
        log_file: 日志文件名（不含路径），为空或未开启文件日志时只输出到控制台
        level: 日志级别，默认取 settings.log_level
        max_bytes: 单个日志文件最大字节数
        backup_count: 保留的日志文件备份数量

    Returns:
        配置好的日志记录器
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # 避免重复添加处理器
    if logger.handlers:
        return logger

    formatter = logging.Formatter(LOG_FORMAT, DATE_FORMAT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level or settings.log_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file and settings.log_to_file:
        log_dir = Path(settings.log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_dir / log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


def get_logger(name: str) -> logging.Logger:
    """
    获取或创建日志记录器，按名称前缀选择日志文件
    """
    if name in logging.Logger.manager.loggerDict and logging.getLogger(name).handlers:
        return logging.getLogger(name)

    family = name.split(".")[0]
    return setup_logger(name, LOG_FILES.get(family, "app.log"))


def log_exception(logger: logging.Logger, message: str, exc_info=True):
    """记录异常信息（含堆栈）"""
    logger.error(message, exc_info=exc_info)


def log_performance(logger: logging.Logger, operation: str, duration_ms: float, extra: str = ""):
    """
    记录性能指标

    Args:
        logger: 日志记录器
        operation: 操作名称
        duration_ms: 耗时（毫秒）
        extra: 附加信息（如帧率）
    """
    suffix = f" | {extra}" if extra else ""
    logger.info(f"[PERFORMANCE] Operation: {operation} | Duration: {duration_ms:.2f}ms{suffix}")


__all__ = ["setup_logger", "get_logger", "log_exception", "log_performance", "LOG_FILES"]
