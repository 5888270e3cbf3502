"""
语义分类模块
三分类语义分类器（BG / FG / "?"）、逐像素语义背景模型 M、
每个像素最近一次语义决策的缓存 (t*, t* 时刻颜色, t* 时刻决策)，以及语义可用性调度。
"""
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Tuple, Union

import numpy as np

from app.models.schemas import Frame, Label, ScheduleSpec, SemanticDecision, SemanticMap, SemanticParams
from app.utils.errors import ConfigError, check_same_shape
from app.utils.logger import get_logger

logger = get_logger("semantic")

Shape = Tuple[int, int]


def classify_semantic(p_s: float, m: float, params: SemanticParams) -> SemanticDecision:
    """
    单像素语义决策，BG 规则优先：
    p_S <= tau_BG -> BG；否则 p_S - M >= tau_FG -> FG；否则 "?"
    """
    if p_s <= params.tau_bg:
        return SemanticDecision.BG
    if p_s - m >= params.tau_fg:
        return SemanticDecision.FG
    return SemanticDecision.DONT_KNOW


def classify_semantic_map(p_s: np.ndarray, m: np.ndarray, params: SemanticParams) -> np.ndarray:
    """classify_semantic 的整图版本，返回 SemanticDecision 编码的 uint8 数组"""
    check_same_shape(m.shape, p_s.shape, "语义概率图")
    decisions = np.full(p_s.shape, SemanticDecision.DONT_KNOW, dtype=np.uint8)
    decisions[(p_s - m) >= params.tau_fg] = SemanticDecision.FG
    decisions[p_s <= params.tau_bg] = SemanticDecision.BG
    return decisions


class SemanticModel:
    """
    语义背景模型 M
    每个像素在第一次拿到语义信息时用当时的 p_S 初始化；之后按保守策略随机更新。
    rng 是独立的随机数流，不影响 ViBe 的随机数。
    """

    def __init__(self, shape: Shape, rng: np.random.Generator):
        self.m = np.zeros(shape, dtype=np.float64)
        self.initialized = np.zeros(shape, dtype=bool)
        self.rng = rng

    @property
    def shape(self) -> Shape:
        return self.m.shape

    def initialize(self, p_s: np.ndarray, availability: np.ndarray) -> None:
        """可用且尚未初始化的像素：M <- p_S"""
        fresh = availability & ~self.initialized
        if fresh.any():
            self.m[fresh] = p_s[fresh]
            self.initialized |= fresh


def update_semantic_model(
    model: SemanticModel,
    p_s_map: SemanticMap,
    final_labels: np.ndarray,
    phi_s: int,
    rng: Optional[np.random.Generator] = None,
    availability: Optional[np.ndarray] = None,
) -> None:
    """
    保守更新：最终标签为 BG 的像素以 1/phi_s 的概率令 M <- p_S，FG 像素不变。
    availability 不为空时只更新本帧有语义信息的像素。
    """
    check_same_shape(model.shape, p_s_map.shape, "语义模型更新")
    check_same_shape(model.shape, final_labels.shape, "语义模型更新标签")
    rng = rng if rng is not None else model.rng
    hit = rng.integers(0, phi_s, size=model.shape) == 0
    mask = hit & (final_labels == Label.BG)
    if availability is not None:
        mask &= availability
    model.m[mask] = p_s_map.probs[mask]
    model.initialized |= mask


class CacheEntry(NamedTuple):
    """单像素缓存记录，t_star == 0 表示 Empty"""
    t_star: int = 0
    color: Tuple[int, int, int] = (0, 0, 0)
    decision: SemanticDecision = SemanticDecision.DONT_KNOW

    @property
    def empty(self) -> bool:
        return self.t_star == 0


class PixelSemanticCache:
    """
    逐像素语义缓存
    t_star == 0 表示尚未有语义信息（Empty），此时 decision 读作 "?"
    """

    def __init__(self, shape: Shape):
        self.t_star = np.zeros(shape, dtype=np.int64)
        self.color = np.zeros(shape + (3,), dtype=np.uint8)
        self.decision = np.full(shape, SemanticDecision.DONT_KNOW, dtype=np.uint8)

    @property
    def shape(self) -> Shape:
        return self.t_star.shape

    @property
    def empty(self) -> np.ndarray:
        return self.t_star == 0

    def entry(self, y: int, x: int) -> "CacheEntry":
        """单像素缓存记录"""
        return CacheEntry(
            t_star=int(self.t_star[y, x]),
            color=tuple(int(c) for c in self.color[y, x]),
            decision=SemanticDecision(int(self.decision[y, x])),
        )

    def refresh(self, t: int, frame: Frame, decisions: np.ndarray, availability: np.ndarray) -> None:
        check_same_shape(self.shape, frame.shape, "语义缓存帧")
        check_same_shape(self.shape, decisions.shape, "语义缓存决策")
        check_same_shape(self.shape, availability.shape, "语义可用性")
        self.t_star[availability] = t
        self.color[availability] = frame.data[availability]
        self.decision[availability] = decisions[availability]


def refresh_cache(cache: PixelSemanticCache, t: int, frame: Frame, decisions: np.ndarray, availability: np.ndarray) -> None:
    cache.refresh(t, frame, decisions, availability)


# ---------------------------------------------------------------------------
# 可用性调度
# ---------------------------------------------------------------------------

class AvailabilitySchedule:
    """语义可用性调度基类：返回 (H, W) 布尔掩膜"""

    def availability(self, t: int, shape: Shape) -> np.ndarray:
        raise NotImplementedError


class FrameSubsample(AvailabilitySchedule):
    """X:1，(t - 1) mod X == 0 的帧整帧可用，第 1 帧总是可用"""

    def __init__(self, x: int):
        if x < 1:
            raise ConfigError(f"X 必须 >= 1，实际 {x}")
        self.x = x

    def availability(self, t: int, shape: Shape) -> np.ndarray:
        return np.full(shape, (t - 1) % self.x == 0, dtype=bool)

    def __repr__(self) -> str:
        return f"FrameSubsample(X={self.x})"


class ExplicitMask(AvailabilitySchedule):
    """逐像素可用性，由 provider(t, shape) 给出"""

    def __init__(self, provider: Callable[[int, Shape], np.ndarray]):
        self.provider = provider

    @classmethod
    def from_directory(cls, directory: Union[str, Path]) -> "ExplicitMask":
        """读取 avail%06d.pgm（255 可用），缺失文件表示该帧无可用像素"""
        from app.services.frame_io import AVAILABILITY_PATTERN, load_availability_mask

        root = Path(directory)

        def provider(t: int, shape: Shape) -> np.ndarray:
            path = root / AVAILABILITY_PATTERN.format(index=t)
            if not path.is_file():
                return np.zeros(shape, dtype=bool)
            return load_availability_mask(path, shape)

        return cls(provider)

    def availability(self, t: int, shape: Shape) -> np.ndarray:
        mask = np.asarray(self.provider(t, shape), dtype=bool)
        check_same_shape(shape, mask.shape, "可用性掩膜")
        return mask

    def __repr__(self) -> str:
        return "ExplicitMask()"


class Never(AvailabilitySchedule):
    """永不可用"""

    def availability(self, t: int, shape: Shape) -> np.ndarray:
        return np.zeros(shape, dtype=bool)

    def __repr__(self) -> str:
        return "Never()"


def availability_schedule(mode: AvailabilitySchedule, t: int, shape: Shape) -> np.ndarray:
    return mode.availability(t, shape)


def build_schedule(spec: ScheduleSpec) -> AvailabilitySchedule:
    """由配置构建调度"""
    if spec.kind == "never":
        return Never()
    if spec.kind == "explicit":
        return ExplicitMask.from_directory(spec.avail_dir)
    return FrameSubsample(spec.x)
