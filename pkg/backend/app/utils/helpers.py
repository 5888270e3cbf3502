"""
工具函数
"""
from pathlib import Path
from typing import List, Tuple, Union
import re

from app.utils.errors import ConfigError

_INDEX_PATTERN = re.compile(r"(\d+)(?=\.[A-Za-z0-9]+$)")


def ensure_dir(directory: Union[str, Path]) -> Path:
    """确保目录存在"""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def frame_index_from_name(file_name: str) -> int:
    """
    从文件名提取帧号
    格式: "in000012.jpg" -> 12

    Raises:
        ValueError: 文件名中没有扩展名前的数字
    """
    match = _INDEX_PATTERN.search(file_name)
    if not match:
        raise ValueError(f"文件名中没有帧号: {file_name}")
    return int(match.group(1))


def parse_int_list(raw: str, name: str = "list") -> List[int]:
    """解析逗号分隔的整数列表，例如 "1,2,5" -> [1, 2, 5]"""
    try:
        values = [int(part) for part in str(raw).split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"{name} 不是逗号分隔的整数列表: {raw!r}") from e
    if not values:
        raise ConfigError(f"{name} 为空")
    return values


def parse_name_list(raw: str) -> List[str]:
    """解析逗号分隔的名称列表并去除空白"""
    return [part.strip().lower() for part in str(raw).split(",") if part.strip()]


def parse_size(raw: str, name: str = "size") -> Tuple[int, int]:
    """解析 "WxH" 形式的尺寸，例如 "40x30" -> (40, 30)"""
    parts = str(raw).lower().split("x")
    try:
        width, height = (int(part) for part in parts)
    except ValueError as e:
        raise ConfigError(f"{name} 不是 WxH 形式: {raw!r}") from e
    return width, height


def format_fps(frames: int, seconds: float) -> str:
    """格式化帧率"""
    if seconds <= 0:
        return "inf fps"
    return f"{frames / seconds:.1f} fps"
