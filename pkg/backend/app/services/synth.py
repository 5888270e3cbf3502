"""
合成序列生成
矩形目标在恒定或缓慢漂移的渐变背景上运动（位置环绕），叠加高斯噪声；
同时写出真值掩膜和"理想"语义概率图，目录结构与 CDNet 相同。
"""
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from app.models.schemas import Frame, SemanticMap, SynthObject, SynthSpec
from app.services.frame_io import (
    FRAME_PATTERN,
    GT_PATTERN,
    SEMANTIC_PATTERN,
    write_frame,
    write_gray,
    write_semantic_map,
)
from app.utils.errors import ConfigError, IoError
from app.utils.helpers import ensure_dir
from app.utils.logger import get_logger

logger = get_logger("synth")

GRADIENT_AMPLITUDE = 20.0


def _object_origins(spec: SynthSpec, rng: np.random.Generator) -> List[Tuple[int, int]]:
    """未指定起点的目标在画面内均匀取起点"""
    origins = []
    for obj in spec.objects:
        x0 = obj.x0 if obj.x0 is not None else int(rng.integers(0, spec.width - obj.width + 1))
        y0 = obj.y0 if obj.y0 is not None else int(rng.integers(0, spec.height - obj.height + 1))
        origins.append((x0, y0))
    return origins


def object_mask(spec: SynthSpec, origins: List[Tuple[int, int]], t: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    第 t 帧（从 1 开始）的目标掩膜与目标颜色图
    位置对 (画面尺寸 - 目标尺寸 + 1) 取模，目标始终完整地在画面内
    """
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    colors = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
    for obj, (x0, y0) in zip(spec.objects, origins):
        x = (x0 + obj.vx * (t - 1)) % (spec.width - obj.width + 1)
        y = (y0 + obj.vy * (t - 1)) % (spec.height - obj.height + 1)
        mask[y:y + obj.height, x:x + obj.width] = True
        colors[y:y + obj.height, x:x + obj.width] = obj.color
    return mask, colors


def background(spec: SynthSpec, t: int) -> np.ndarray:
    """(H, W, 3) float 背景；gradient 为水平正弦渐变，每帧平移 drift_per_frame 像素"""
    base = np.broadcast_to(np.asarray(spec.background_color, dtype=np.float64), (spec.height, spec.width, 3))
    if spec.background == "constant":
        return base.copy()
    xs = np.arange(spec.width, dtype=np.float64) + spec.drift_per_frame * (t - 1)
    ramp = GRADIENT_AMPLITUDE * np.sin(2.0 * np.pi * xs / spec.width)
    return base + ramp[None, :, None]


def random_objects(count: int, size: Tuple[int, int], seed: int, max_speed: int = 4) -> List[SynthObject]:
    """
    count 个相同尺寸的目标，速度分量在 [-max_speed, max_speed] 内且不全为 0，颜色随机
    起点留空，由 synth 按各视频的种子决定
    """
    if count < 0 or max_speed < 1:
        raise ConfigError(f"目标数量或速度非法: count={count}, max_speed={max_speed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    objects = []
    for _ in range(count):
        vx, vy = 0, 0
        while vx == 0 and vy == 0:
            vx, vy = (int(v) for v in rng.integers(-max_speed, max_speed + 1, size=2))
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        objects.append(SynthObject(width=size[0], height=size[1], vx=vx, vy=vy, color=color))
    return objects


def render_frame(spec: SynthSpec, origins: List[Tuple[int, int]], t: int, rng: np.random.Generator):
    """返回 (Frame, 真值 uint8, SemanticMap)"""
    mask, colors = object_mask(spec, origins, t)
    image = np.where(mask[:, :, None], colors, background(spec, t))
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    frame = Frame(data=np.clip(np.rint(image), 0, 255).astype(np.uint8), index=t)

    gt = np.where(mask, 255, 0).astype(np.uint8)

    probs = np.where(mask, spec.semantic_fidelity, 1.0 - spec.semantic_fidelity) * 255.0
    if spec.noise_sigma > 0:
        probs = probs + rng.normal(0.0, spec.noise_sigma, size=probs.shape)
    semantic = SemanticMap(values=np.clip(np.rint(probs), 0, 255).astype(np.uint8), index=t)
    return frame, gt, semantic


def synth(spec: SynthSpec, out_dir: Union[str, Path], seed: int) -> Path:
    """
    生成一个序列：input/in%06d.ppm、groundtruth/gt%06d.pgm、semantic/sem%06d.pgm、temporalROI.txt

    Raises:
        IoError: 输出目录不可写
    """
    root = Path(out_dir)
    rng = np.random.Generator(np.random.PCG64(seed))
    origins = _object_origins(spec, rng)
    try:
        input_dir = ensure_dir(root / "input")
        gt_dir = ensure_dir(root / "groundtruth")
        semantic_dir = ensure_dir(root / "semantic")
        (root / "temporalROI.txt").write_text(f"1 {spec.num_frames}\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"无法创建合成序列目录 {root}: {e}") from e

    for t in range(1, spec.num_frames + 1):
        frame, gt, semantic = render_frame(spec, origins, t, rng)
        write_frame(input_dir / f"{FRAME_PATTERN.format(index=t)}.ppm", frame)
        write_gray(gt_dir / f"{GT_PATTERN.format(index=t)}.pgm", gt)
        write_semantic_map(semantic_dir / SEMANTIC_PATTERN.format(index=t), semantic)

    logger.info(f"合成序列 {root.name}: {spec.width}x{spec.height}, {spec.num_frames} 帧, {len(spec.objects)} 个目标, seed={seed}")
    return root


def derive_seeds(seed: int, count: int) -> List[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


def synth_suite(spec: SynthSpec, out_dir: Union[str, Path], videos: int, seed: int) -> List[Path]:
    """生成 seq001 .. seqNNN，每个视频使用由 seed 派生的种子"""
    root = Path(out_dir)
    return [
        synth(spec, root / f"seq{i + 1:03d}", video_seed)
        for i, video_seed in enumerate(derive_seeds(seed, videos))
    ]
