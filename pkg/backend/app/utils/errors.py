"""
异常定义
数据类错误（IoError / FormatError / LayoutError / DimensionError）在 CLI 中以退出码 2 结束，
配置类错误（ConfigError / ScheduleError）以退出码 1 结束。
"""


class RtsbsError(Exception):
    """所有领域异常的基类"""

    exit_code = 2


class IoError(RtsbsError):
    """文件缺失、为空或无法读写"""


class FormatError(RtsbsError):
    """不支持的图像编码、位深或尺寸不匹配"""


class LayoutError(RtsbsError):
    """数据集目录结构不符合 CDNet 约定"""


class DimensionError(RtsbsError):
    """两个栅格的尺寸不一致"""


class ConfigError(RtsbsError):
    """配置非法"""

    exit_code = 1


class ScheduleError(RtsbsError):
    """语义可用性与语义图是否提供不一致"""

    exit_code = 1


class ObjectiveError(RtsbsError):
    """优化目标函数求值失败，保留原始异常作为 __cause__"""


def check_same_shape(expected: tuple, actual: tuple, what: str) -> None:
    """尺寸检查，不一致时抛出 DimensionError"""
    if tuple(expected) != tuple(actual):
        raise DimensionError(f"{what} 尺寸不匹配: 期望 {tuple(expected)}, 实际 {tuple(actual)}")


__all__ = [
    "RtsbsError",
    "IoError",
    "FormatError",
    "LayoutError",
    "DimensionError",
    "ConfigError",
    "ScheduleError",
    "ObjectiveError",
    "check_same_shape",
]
