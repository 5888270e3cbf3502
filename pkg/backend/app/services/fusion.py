"""
融合模块
SBS 决策表（BGS 标签 x 语义决策）、RT-SBS 决策表（再加变化检测结果），
以及逐帧流水线：ViBe 分类 -> 语义刷新 -> 变化检测 -> 融合 -> 模型更新（可选语义反馈）。
"""
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.models.schemas import (
    MAX_L1_DISTANCE,
    ChangeParams,
    ChangeVerdict,
    Frame,
    FrameResult,
    FusionMode,
    Label,
    PipelineConfig,
    SemanticDecision,
    SemanticMap,
)
from app.services.change_detect import detect_map
from app.services.semantic import (
    AvailabilitySchedule,
    PixelSemanticCache,
    SemanticModel,
    build_schedule,
    classify_semantic_map,
    update_semantic_model,
)
from app.services.vibe import VibeModel, median_post_filter
from app.utils.errors import ConfigError, ScheduleError, check_same_shape
from app.utils.logger import get_logger

# CLI 模式名 -> (融合模式, 强制的 feedback 取值；None 表示沿用配置)
MODE_ALIASES: Dict[str, Tuple[FusionMode, Optional[bool]]] = {
    "vibe": (FusionMode.PURE_BGS, None),
    "sbs": (FusionMode.SBS, None),
    "rtsbs": (FusionMode.RT_SBS, False),
    "rtsbs-fb": (FusionMode.RT_SBS, True),
    "never": (FusionMode.NEVER_REPEAT, None),
    "always": (FusionMode.ALWAYS_REPEAT, None),
}

# 沿用缓存语义决策的三种模式
REPEATING_MODES = (FusionMode.RT_SBS, FusionMode.NEVER_REPEAT, FusionMode.ALWAYS_REPEAT)


def combine_sbs(b: Label, s: SemanticDecision) -> Label:
    """SBS 决策表：语义决策确定时取语义，"?" 时取 BGS"""
    if s == SemanticDecision.DONT_KNOW:
        return Label(b)
    return Label(int(s))


def combine_rtsbs(b: Label, s_star: SemanticDecision, c: ChangeVerdict) -> Label:
    """
    RT-SBS 决策表
        (BG, ?, -) -> BG    (BG, BG, -) -> BG
        (BG, FG, 未变化) -> FG    (BG, FG, 变化) -> BG
        (FG, ?, -) -> FG    (FG, FG, -) -> FG
        (FG, BG, 未变化) -> BG    (FG, BG, 变化) -> FG
    BGS 与缓存决策一致或缓存为 "?" 时不看 c
    """
    if s_star == SemanticDecision.DONT_KNOW or int(s_star) == int(b):
        return Label(b)
    if c == ChangeVerdict.NO_CHANGE:
        return Label(int(s_star))
    return Label(b)


def _build_sbs_table() -> np.ndarray:
    table = np.zeros((len(Label), len(SemanticDecision)), dtype=np.uint8)
    for b in Label:
        for s in SemanticDecision:
            table[b, s] = combine_sbs(b, s)
    return table


def _build_rtsbs_table() -> np.ndarray:
    table = np.zeros((len(Label), len(SemanticDecision), len(ChangeVerdict)), dtype=np.uint8)
    for b in Label:
        for s in SemanticDecision:
            for c in ChangeVerdict:
                table[b, s, c] = combine_rtsbs(b, s, c)
    return table


SBS_TABLE = _build_sbs_table()
RTSBS_TABLE = _build_rtsbs_table()


def combine_sbs_map(b: np.ndarray, s: np.ndarray) -> np.ndarray:
    return SBS_TABLE[b, s]


def combine_rtsbs_map(b: np.ndarray, s_star: np.ndarray, c: np.ndarray) -> np.ndarray:
    return RTSBS_TABLE[b, s_star, c]


def resolve_mode(name: str) -> Tuple[FusionMode, Optional[bool]]:
    """CLI 模式名或 FusionMode 值 -> (模式, feedback 覆盖)"""
    key = name.strip().lower()
    if key in MODE_ALIASES:
        return MODE_ALIASES[key]
    for mode in FusionMode:
        if key in (mode.value.lower(), mode.name.lower()):
            return mode, None
    raise ConfigError(f"未知融合模式: {name}（可选 {', '.join(MODE_ALIASES)}）")


def config_for_mode(base: PipelineConfig, name: str) -> PipelineConfig:
    mode, feedback = resolve_mode(name)
    update = {"mode": mode}
    if feedback is not None:
        update["feedback"] = feedback
    return base.model_copy(update=update)


def effective_change_params(config: PipelineConfig) -> ChangeParams:
    """两种启发式即强制阈值的 RT-SBS：永不沿用取 -1，总是沿用取距离上界"""
    if config.mode == FusionMode.NEVER_REPEAT:
        return ChangeParams(tau_star_bg=-1, tau_star_fg=-1)
    if config.mode == FusionMode.ALWAYS_REPEAT:
        return ChangeParams(tau_star_bg=MAX_L1_DISTANCE, tau_star_fg=MAX_L1_DISTANCE)
    return config.change


def semantic_rng(seed: int) -> np.random.Generator:
    """语义模型 M 的随机数流，与 ViBe 的流相互独立"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))


class RtSbsPipeline:
    """
    单个视频的融合流水线
    ViBe 在第一帧到来时初始化；一个实例只处理一个视频，不可跨线程共享
    """

    def __init__(self, config: PipelineConfig, schedule: Optional[AvailabilitySchedule] = None):
        self.config = config
        self.schedule = schedule if schedule is not None else build_schedule(config.schedule)
        self.change_params = effective_change_params(config)
        self.vibe: Optional[VibeModel] = None
        self.semantic_model: Optional[SemanticModel] = None
        self.cache: Optional[PixelSemanticCache] = None
        self.frames_processed = 0
        self.logger = get_logger("pipeline")

    @property
    def uses_semantics(self) -> bool:
        return self.config.mode != FusionMode.PURE_BGS

    def _initialize(self, frame: Frame) -> None:
        self.vibe = VibeModel.from_first_frame(frame, self.config.vibe, self.config.seed)
        self.semantic_model = SemanticModel(frame.shape, semantic_rng(self.config.seed))
        self.cache = PixelSemanticCache(frame.shape)
        self.logger.info(
            f"流水线初始化: mode={self.config.mode.value}, schedule={self.schedule!r}, "
            f"feedback={self.config.feedback}, seed={self.config.seed}"
        )

    def availability(self, t: int, shape: Tuple[int, int]) -> np.ndarray:
        if not self.uses_semantics:
            return np.zeros(shape, dtype=bool)
        return self.schedule.availability(t, shape)

    def process_frame(
        self,
        frame: Frame,
        semantic_map: Optional[SemanticMap] = None,
        t: Optional[int] = None,
        availability: Optional[np.ndarray] = None,
    ) -> FrameResult:
        """
        处理一帧

        Args:
            frame: 当前帧
            semantic_map: 本帧语义概率图，仅在有可用像素时提供
            t: 帧号，默认取 frame.index
            availability: 覆盖调度给出的逐像素可用性

        Raises:
            DimensionError: 尺寸不一致
            ScheduleError: 可用性与语义图是否提供不一致
        """
        t = frame.index if t is None else t
        if self.vibe is None:
            self._initialize(frame)
        shape = frame.shape

        bgs = self.vibe.classify(frame)

        if not self.uses_semantics:
            available = np.zeros(shape, dtype=bool)
        elif availability is None:
            available = self.availability(t, shape)
        else:
            available = np.asarray(availability, dtype=bool)
            check_same_shape(shape, available.shape, "可用性掩膜")
        any_available = bool(available.any())

        if self.uses_semantics:
            if any_available and semantic_map is None:
                raise ScheduleError(f"第 {t} 帧有语义可用像素，但没有提供语义图")
            if semantic_map is not None and not any_available:
                raise ScheduleError(f"第 {t} 帧没有语义可用像素，却提供了语义图")

        fresh = np.full(shape, SemanticDecision.DONT_KNOW, dtype=np.uint8)
        if any_available:
            check_same_shape(shape, semantic_map.shape, "语义图")
            probs = semantic_map.probs
            self.semantic_model.initialize(probs, available)
            decisions = classify_semantic_map(probs, self.semantic_model.m, self.config.semantic)
            fresh[available] = decisions[available]
            if self.config.mode in REPEATING_MODES:
                self.cache.refresh(t, frame, decisions, available)

        if self.config.mode == FusionMode.PURE_BGS:
            semantic_mask = fresh
            change = np.full(shape, ChangeVerdict.DONT_CARE, dtype=np.uint8)
            output = bgs.copy()
        elif self.config.mode == FusionMode.SBS:
            semantic_mask = fresh
            change = np.full(shape, ChangeVerdict.DONT_CARE, dtype=np.uint8)
            output = combine_sbs_map(bgs, fresh)
        else:
            semantic_mask = self.cache.decision.copy()
            change = detect_map(frame, self.cache, self.change_params, t)
            output = combine_rtsbs_map(bgs, semantic_mask, change)

        self.vibe.update(frame, output if self.config.feedback else bgs)

        if any_available:
            labels = output if self.config.semantic_feedback else bgs
            update_semantic_model(
                self.semantic_model, semantic_map, labels, self.config.phi_s, availability=available
            )

        if self.config.post_filter:
            output = median_post_filter(output)

        self.frames_processed += 1
        return FrameResult(bgs_mask=bgs, semantic_mask=semantic_mask, change_mask=change, output_mask=output)

    def run(self, frames: List[Frame], semantic_maps: Optional[Mapping[int, SemanticMap]] = None) -> List[FrameResult]:
        """
        顺序处理整段视频，semantic_maps 以帧号为键
        可用但缺少语义图的帧按无可用像素处理并记录警告
        """
        semantic_maps = semantic_maps or {}
        results = []
        for frame in frames:
            t = frame.index
            available = self.availability(t, frame.shape)
            semantic_map = None
            if available.any():
                semantic_map = semantic_maps.get(t)
                if semantic_map is None:
                    self.logger.warning(f"第 {t} 帧缺少语义图，按无语义信息处理")
                    available = np.zeros(frame.shape, dtype=bool)
            results.append(self.process_frame(frame, semantic_map, t, availability=available))
        return results


def process_frame(
    pipeline: RtSbsPipeline,
    frame: Frame,
    semantic_map: Optional[SemanticMap] = None,
    t: Optional[int] = None,
) -> FrameResult:
    return pipeline.process_frame(frame, semantic_map, t)
