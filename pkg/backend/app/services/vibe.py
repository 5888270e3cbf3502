"""
ViBe 背景模型
每个像素保存 N 个颜色样本；像素与至少 min_matches 个样本的颜色距离不超过 R 时判为背景。
更新是保守的：只有被标为背景的像素会以 1/phi 的概率写入自身样本集，
并以 1/phi 的概率写入一个随机 8 邻域像素的样本集。
更新所用的标签由调用方提供，以便用融合输出 D_t 代替 B_t（语义反馈）。

随机数：numpy PCG64，按种子显式初始化。每次 update 都抽取全图的随机数组，
因此随机数流的消耗与标签无关。
"""
from pathlib import Path
from typing import Union

import numpy as np

from app.models.schemas import Frame, Label, VibeParams
from app.utils.errors import FormatError, IoError, check_same_shape
from app.utils.logger import get_logger

logger = get_logger("vibe")

SNAPSHOT_MAGIC = b"VIBE1"

# 8 邻域偏移 (dy, dx)，不含中心
NEIGHBOR_OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    dtype=np.intp,
)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def color_distance(samples: np.ndarray, pixels: np.ndarray, metric: str = "l1") -> np.ndarray:
    """
    逐像素颜色距离，最后一维为 RGB
    l1 返回通道绝对差之和；l2 返回平方和（与 R^2 比较）
    """
    # 8 位 RGB 的 L1 距离不超过 765，int16 足够
    dtype = np.int32 if metric == "l2" else np.int16
    diff = samples.astype(dtype) - pixels.astype(dtype)
    if metric == "l2":
        return (diff * diff).sum(axis=-1)
    return np.abs(diff).sum(axis=-1, dtype=dtype)


class VibeModel:
    """ViBe 模型状态：samples 形状 (N, H, W, 3) uint8，rng 为 PCG64 生成器"""

    def __init__(self, samples: np.ndarray, params: VibeParams, rng: np.random.Generator):
        self.samples = samples
        self.params = params
        self.rng = rng

    @property
    def height(self) -> int:
        return int(self.samples.shape[1])

    @property
    def width(self) -> int:
        return int(self.samples.shape[2])

    @property
    def shape(self):
        return self.height, self.width

    @classmethod
    def from_first_frame(cls, first_frame: Frame, params: VibeParams, seed: int) -> "VibeModel":
        """
        用第一帧初始化：每个样本从像素 3x3 邻域（含自身，边界截断）均匀有放回抽取
        """
        rng = make_rng(seed)
        height, width = first_frame.shape
        n = params.num_samples
        offsets = rng.integers(-1, 2, size=(2, n, height, width))
        ys = np.clip(np.arange(height)[None, :, None] + offsets[0], 0, height - 1)
        xs = np.clip(np.arange(width)[None, None, :] + offsets[1], 0, width - 1)
        samples = first_frame.data[ys, xs]
        logger.debug(f"ViBe 初始化: {width}x{height}, N={n}, seed={seed}")
        return cls(np.ascontiguousarray(samples), params, rng)

    def _threshold(self) -> int:
        radius = self.params.match_radius
        return radius * radius if self.params.metric == "l2" else radius

    def classify(self, frame: Frame) -> np.ndarray:
        """返回 Label 编码的 (H, W) uint8 掩膜，不修改模型"""
        check_same_shape(self.shape, frame.shape, "ViBe 分类帧")
        threshold = self._threshold()
        pixels = frame.data.astype(np.int32 if self.params.metric == "l2" else np.int16)
        matches = np.zeros(self.shape, dtype=np.int32)
        for sample in self.samples:
            matches += color_distance(sample, pixels, self.params.metric) <= threshold
        return np.where(matches >= self.params.min_matches, Label.BG, Label.FG).astype(np.uint8)

    def update(self, frame: Frame, labels: np.ndarray) -> None:
        """保守随机更新（原地），labels 中为 BG 的像素才会写入"""
        check_same_shape(self.shape, frame.shape, "ViBe 更新帧")
        check_same_shape(self.shape, labels.shape, "ViBe 更新标签")
        height, width = self.shape
        phi = self.params.subsample_factor
        n = self.params.num_samples
        rng = self.rng

        self_hit = rng.integers(0, phi, size=(height, width)) == 0
        self_slot = rng.integers(0, n, size=(height, width))
        neighbor_hit = rng.integers(0, phi, size=(height, width)) == 0
        neighbor_dir = rng.integers(0, len(NEIGHBOR_OFFSETS), size=(height, width))
        neighbor_slot = rng.integers(0, n, size=(height, width))

        background = labels == Label.BG

        ys, xs = np.nonzero(background & self_hit)
        self.samples[self_slot[ys, xs], ys, xs] = frame.data[ys, xs]

        ys, xs = np.nonzero(background & neighbor_hit)
        offsets = NEIGHBOR_OFFSETS[neighbor_dir[ys, xs]]
        ny = np.clip(ys + offsets[:, 0], 0, height - 1)
        nx = np.clip(xs + offsets[:, 1], 0, width - 1)
        self.samples[neighbor_slot[ys, xs], ny, nx] = frame.data[ys, xs]

    def step(self, frame: Frame) -> np.ndarray:
        """分类后用自身标签更新，返回更新前的分类结果"""
        labels = self.classify(frame)
        self.update(frame, labels)
        return labels


def init_model(first_frame: Frame, params: VibeParams, seed: int) -> VibeModel:
    return VibeModel.from_first_frame(first_frame, params, seed)


def classify(model: VibeModel, frame: Frame) -> np.ndarray:
    return model.classify(frame)


def update(model: VibeModel, frame: Frame, labels: np.ndarray) -> None:
    model.update(frame, labels)


def step(model: VibeModel, frame: Frame) -> np.ndarray:
    return model.step(frame)


def median_post_filter(mask: np.ndarray) -> np.ndarray:
    """3x3 二值中值滤波（9 邻域多数表决），边界按截断处理"""
    padded = np.pad((mask == Label.FG).astype(np.uint8), 1, mode="edge")
    height, width = mask.shape
    votes = np.zeros((height, width), dtype=np.uint8)
    for dy in range(3):
        for dx in range(3):
            votes += padded[dy:dy + height, dx:dx + width]
    return np.where(votes >= 5, Label.FG, Label.BG).astype(np.uint8)


# ---------------------------------------------------------------------------
# 调试快照：b"VIBE1" + width, height, N（uint32 小端）+ 逐像素行优先的样本
# ---------------------------------------------------------------------------

def dump_snapshot(model: VibeModel, path: Union[str, Path]) -> None:
    header = SNAPSHOT_MAGIC + np.array([model.width, model.height, model.params.num_samples], dtype="<u4").tobytes()
    body = np.ascontiguousarray(model.samples.transpose(1, 2, 0, 3)).tobytes()
    try:
        Path(path).write_bytes(header + body)
    except OSError as e:
        raise IoError(f"无法写入 ViBe 快照 {path}: {e}") from e


def load_snapshot(path: Union[str, Path], params: VibeParams, seed: int = 0) -> VibeModel:
    """读取快照；随机数状态不在快照中，按 seed 重新初始化"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"无法读取 ViBe 快照 {path}: {e}") from e
    if not data.startswith(SNAPSHOT_MAGIC) or len(data) < 17:
        raise FormatError(f"不是 ViBe 快照: {path}")
    width, height, n = (int(v) for v in np.frombuffer(data[5:17], dtype="<u4"))
    if n != params.num_samples:
        raise FormatError(f"快照样本数 {n} 与参数 N={params.num_samples} 不一致")
    body = np.frombuffer(data[17:], dtype=np.uint8)
    if body.size != width * height * n * 3:
        raise FormatError(f"快照数据长度不符: {path}")
    samples = body.reshape(height, width, n, 3).transpose(2, 0, 1, 3)
    return VibeModel(np.ascontiguousarray(samples), params, make_rng(seed))
