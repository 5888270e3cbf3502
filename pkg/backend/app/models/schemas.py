"""
数据模型定义
标签编码、栅格容器（帧 / 语义图 / 真值）、流水线参数、优化与评估的数据结构
"""
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.utils.errors import ConfigError


class Label(IntEnum):
    """BGS / 融合输出的二分类标签"""
    BG = 0
    FG = 1


class SemanticDecision(IntEnum):
    """语义三分类输出，DONT_KNOW 即 "?" 类"""
    BG = 0
    FG = 1
    DONT_KNOW = 2


class ChangeVerdict(IntEnum):
    """变化检测输出"""
    NO_CHANGE = 0
    CHANGE = 1
    DONT_CARE = 2


class FusionMode(str, Enum):
    """融合模式，两种启发式是强制阈值的 RT-SBS"""
    PURE_BGS = "PureBgs"
    SBS = "Sbs"
    RT_SBS = "RtSbs"
    NEVER_REPEAT = "HeuristicNeverRepeat"
    ALWAYS_REPEAT = "HeuristicAlwaysRepeat"


# 8 位 RGB 的最大 L1 距离
MAX_L1_DISTANCE = 765
# CDNet 真值编码
GT_STATIC, GT_SHADOW, GT_OUTSIDE_ROI, GT_UNKNOWN, GT_MOVING = 0, 50, 85, 170, 255
GT_LABELS = (GT_STATIC, GT_SHADOW, GT_OUTSIDE_ROI, GT_UNKNOWN, GT_MOVING)


# ---------------------------------------------------------------------------
# 栅格容器
# ---------------------------------------------------------------------------

class _Raster(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def height(self) -> int:
        return int(self._array().shape[0])

    @property
    def width(self) -> int:
        return int(self._array().shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def _array(self) -> np.ndarray:
        raise NotImplementedError


class Frame(_Raster):
    """一帧 8 位 RGB 图像，data 形状为 (height, width, 3)，index 从 1 开始"""
    data: np.ndarray
    index: int = Field(default=1, ge=1)

    @field_validator("data")
    @classmethod
    def check_data(cls, value: np.ndarray) -> np.ndarray:
        if not isinstance(value, np.ndarray) or value.dtype != np.uint8:
            raise ValueError("帧数据必须是 uint8 数组")
        if value.ndim != 3 or value.shape[2] != 3:
            raise ValueError(f"帧数据形状必须为 (H, W, 3)，实际 {value.shape}")
        if value.shape[0] == 0 or value.shape[1] == 0:
            raise ValueError("帧宽高必须大于 0")
        return value

    def _array(self) -> np.ndarray:
        return self.data


class SemanticMap(_Raster):
    """语义概率图，values 为 8 位量化值，p = v / 255"""
    values: np.ndarray
    index: int = Field(default=1, ge=1)

    @field_validator("values")
    @classmethod
    def check_values(cls, value: np.ndarray) -> np.ndarray:
        if not isinstance(value, np.ndarray) or value.dtype != np.uint8 or value.ndim != 2:
            raise ValueError("语义图必须是二维 uint8 数组")
        return value

    @property
    def probs(self) -> np.ndarray:
        return self.values.astype(np.float64) / 255.0

    def _array(self) -> np.ndarray:
        return self.values


class GroundTruthMask(_Raster):
    """CDNet 真值：0 静止, 50 阴影, 85 ROI 外, 170 未知运动, 255 运动"""
    labels: np.ndarray
    index: int = Field(default=1, ge=1)

    @field_validator("labels")
    @classmethod
    def check_labels(cls, value: np.ndarray) -> np.ndarray:
        if not isinstance(value, np.ndarray) or value.dtype != np.uint8 or value.ndim != 2:
            raise ValueError("真值必须是二维 uint8 数组")
        if not np.isin(value, GT_LABELS).all():
            bad = sorted(set(np.unique(value).tolist()) - set(GT_LABELS))
            raise ValueError(f"真值包含非法标签: {bad[:5]}")
        return value

    def _array(self) -> np.ndarray:
        return self.labels


class SequenceDescriptor(BaseModel):
    """一个 CDNet 布局的视频序列"""
    name: str
    root: Path
    frames_dir: Path
    frame_files: List[Path]
    gt_dir: Optional[Path] = None
    semantic_dir: Optional[Path] = None
    temporal_roi: Optional[Tuple[int, int]] = None
    roi_path: Optional[Path] = None
    category: str = ""

    @property
    def num_frames(self) -> int:
        return len(self.frame_files)

    def in_temporal_roi(self, t: int) -> bool:
        if self.temporal_roi is None:
            return True
        first, last = self.temporal_roi
        return first <= t <= last


class FrameResult(BaseModel):
    """单帧输出：B_t、S（新鲜或缓存）、C_t、D_t，四个栅格同尺寸"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    bgs_mask: np.ndarray
    semantic_mask: np.ndarray
    change_mask: np.ndarray
    output_mask: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self):
        shapes = {m.shape for m in (self.bgs_mask, self.semantic_mask, self.change_mask, self.output_mask)}
        if len(shapes) != 1:
            raise ValueError(f"FrameResult 栅格尺寸不一致: {shapes}")
        return self


# ---------------------------------------------------------------------------
# 流水线参数
# ---------------------------------------------------------------------------

class VibeParams(BaseModel):
    """ViBe 参数：N 个样本、L1 半径 R、最少匹配数、更新子采样因子 phi"""
    num_samples: int = Field(default=20, ge=1)
    match_radius: int = Field(default=20, ge=0)
    min_matches: int = Field(default=2, ge=1)
    subsample_factor: int = Field(default=16, ge=1)
    metric: Literal["l1", "l2"] = "l1"

    @model_validator(mode="after")
    def check_min_matches(self):
        if self.min_matches > self.num_samples:
            raise ValueError("min_matches 不能大于 num_samples")
        return self


class SemanticParams(BaseModel):
    """语义分类阈值；phi_s 为空时沿用 ViBe 的 phi"""
    tau_bg: float = Field(default=0.25, ge=0.0, le=1.0)
    tau_fg: float = Field(default=0.35, ge=-1.0, le=1.0)
    phi_s: Optional[int] = Field(default=None, ge=1)


class ChangeParams(BaseModel):
    """变化检测阈值（RGB L1 距离），负值表示永远判为变化"""
    tau_star_bg: float = 60
    tau_star_fg: float = 60

    @field_validator("tau_star_bg", "tau_star_fg")
    @classmethod
    def check_finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("阈值必须是有限数")
        return value


class ScheduleSpec(BaseModel):
    """语义可用性调度：subsample 即 X:1，explicit 读取逐像素可用性掩膜，never 永不可用"""
    kind: Literal["subsample", "explicit", "never"] = "subsample"
    x: int = 5
    avail_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == "subsample" and self.x < 1:
            raise ValueError(f"X 必须 >= 1，实际 {self.x}")
        if self.kind == "explicit" and not self.avail_dir:
            raise ValueError("explicit 调度需要 avail_dir")
        return self


# 配置文件键 -> (分组, 字段)
FLAT_KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "tau_bg": ("semantic", "tau_bg"),
    "tau_fg": ("semantic", "tau_fg"),
    "phi_s": ("semantic", "phi_s"),
    "tau_star_bg": ("change", "tau_star_bg"),
    "tau_star_fg": ("change", "tau_star_fg"),
    "x": ("schedule", "x"),
    "schedule": ("schedule", "kind"),
    "avail_dir": ("schedule", "avail_dir"),
    "n": ("vibe", "num_samples"),
    "r": ("vibe", "match_radius"),
    "min_matches": ("vibe", "min_matches"),
    "phi": ("vibe", "subsample_factor"),
    "metric": ("vibe", "metric"),
    "mode": (None, "mode"),
    "feedback": (None, "feedback"),
    "semantic_feedback": (None, "semantic_feedback"),
    "seed": (None, "seed"),
    "post_filter": (None, "post_filter"),
}


class PipelineConfig(BaseModel):
    """流水线完整配置"""
    mode: FusionMode = FusionMode.RT_SBS
    vibe: VibeParams = Field(default_factory=VibeParams)
    semantic: SemanticParams = Field(default_factory=SemanticParams)
    change: ChangeParams = Field(default_factory=ChangeParams)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    feedback: bool = False
    semantic_feedback: bool = True
    seed: int = 0
    post_filter: bool = False

    @property
    def phi_s(self) -> int:
        return self.semantic.phi_s or self.vibe.subsample_factor

    @classmethod
    def from_flat(cls, values: Mapping[str, Any], base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        """
        由扁平键值（配置文件 / CLI）构建配置，键大小写不敏感

        Raises:
            ConfigError: 未知键或取值非法
        """
        data = (base or cls()).model_dump(mode="json")
        for raw_key, raw_value in values.items():
            if raw_value is None:
                continue
            key = str(raw_key).strip().lower()
            if key not in FLAT_KEYS:
                raise ConfigError(f"未知配置项: {raw_key}")
            group, field = FLAT_KEYS[key]
            value = raw_value.strip() if isinstance(raw_value, str) else raw_value
            if key == "mode" and isinstance(value, str):
                value = _normalize_mode(value)
            if group is None:
                data[field] = value
            else:
                data[group][field] = value
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"配置非法: {e}") from e

    def to_flat(self) -> Dict[str, Any]:
        """导出为扁平键值，键与配置文件一致"""
        dumped = self.model_dump(mode="json")
        flat: Dict[str, Any] = {}
        for key, (group, field) in FLAT_KEYS.items():
            value = dumped[field] if group is None else dumped[group][field]
            if value is not None:
                flat[key] = value
        return flat


def _normalize_mode(value: str) -> str:
    lowered = value.strip().lower()
    for mode in FusionMode:
        if mode.value.lower() == lowered or mode.name.lower() == lowered:
            return mode.value
    return value


# ---------------------------------------------------------------------------
# 评估与优化
# ---------------------------------------------------------------------------

class Confusion(BaseModel):
    """混淆计数，跨帧、跨视频可加"""
    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(tp=self.tp + other.tp, fp=self.fp + other.fp,
                         fn=self.fn + other.fn, tn=self.tn + other.tn)

    @property
    def precision(self) -> Optional[float]:
        denominator = self.tp + self.fp
        return self.tp / denominator if denominator else None

    @property
    def recall(self) -> Optional[float]:
        denominator = self.tp + self.fn
        return self.tp / denominator if denominator else None


class ScoreReport(BaseModel):
    """视频 / 类别 / 总体 F1，None 表示未定义"""
    per_video: Dict[str, Optional[float]]
    per_category: Dict[str, Optional[float]]
    overall: Optional[float] = None


class ThresholdSet(BaseModel):
    """RT-SBS 的四个阈值，取值范围与 SemanticParams / ChangeParams 一致"""
    tau_bg: float = Field(ge=0.0, le=1.0)
    tau_fg: float = Field(ge=-1.0, le=1.0)
    tau_star_bg: float
    tau_star_fg: float

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.tau_bg, self.tau_fg, self.tau_star_bg, self.tau_star_fg

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "ThresholdSet":
        """原样取出配置中的阈值，不做截断或取整"""
        return cls(
            tau_bg=config.semantic.tau_bg,
            tau_fg=config.semantic.tau_fg,
            tau_star_bg=config.change.tau_star_bg,
            tau_star_fg=config.change.tau_star_fg,
        )

    def apply(self, config: PipelineConfig) -> PipelineConfig:
        return config.model_copy(update={
            "semantic": config.semantic.model_copy(update={"tau_bg": self.tau_bg, "tau_fg": self.tau_fg}),
            "change": ChangeParams(tau_star_bg=self.tau_star_bg, tau_star_fg=self.tau_star_fg),
        })


class Trial(BaseModel):
    """一次目标函数评估"""
    params: ThresholdSet
    score: Optional[float] = None
    seed: int = 0
    budget_id: int = 0


# ---------------------------------------------------------------------------
# 合成数据
# ---------------------------------------------------------------------------

class SynthObject(BaseModel):
    """矩形运动目标，位置按帧环绕"""
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    vx: int = 0
    vy: int = 0
    color: Tuple[int, int, int] = (200, 40, 40)
    x0: Optional[int] = None
    y0: Optional[int] = None

    @field_validator("color")
    @classmethod
    def check_color(cls, value):
        if any(c < 0 or c > 255 for c in value):
            raise ValueError("颜色分量必须在 [0, 255]")
        return value


def _default_objects() -> List[SynthObject]:
    return [
        SynthObject(width=40, height=30, vx=3, vy=1, color=(200, 40, 40)),
        SynthObject(width=24, height=48, vx=-2, vy=2, color=(40, 60, 210)),
    ]


class SynthSpec(BaseModel):
    """合成序列描述"""
    width: int = Field(default=320, ge=1)
    height: int = Field(default=240, ge=1)
    num_frames: int = Field(default=100, ge=1)
    objects: List[SynthObject] = Field(default_factory=_default_objects)
    background: Literal["constant", "gradient"] = "constant"
    background_color: Tuple[int, int, int] = (90, 110, 100)
    drift_per_frame: float = 0.2
    noise_sigma: float = Field(default=8.0, ge=0.0)
    semantic_fidelity: float = Field(default=0.9, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_objects(self):
        for obj in self.objects:
            if obj.width > self.width or obj.height > self.height:
                raise ValueError("目标尺寸超出画面")
        return self
