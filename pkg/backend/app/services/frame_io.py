"""
帧序列读写模块
负责读取帧、语义概率图、真值与 CDNet 目录结构，写出结果掩膜。
Netpbm（P5/P6, maxval 255）自行解析以保证逐位一致，PNG/JPEG/BMP 交给 Pillow。
"""
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from app.models.schemas import Frame, GroundTruthMask, Label, SemanticMap, SequenceDescriptor
from app.utils.errors import DimensionError, FormatError, IoError, LayoutError
from app.utils.helpers import ensure_dir, frame_index_from_name
from app.utils.logger import get_logger

logger = get_logger("frame_io")

PathLike = Union[str, Path]

NETPBM_SUFFIXES = {".ppm", ".pgm", ".pnm"}
FRAME_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"} | NETPBM_SUFFIXES
GT_SUFFIXES = (".png", ".pgm", ".bmp")
MASK_SUFFIXES = (".pgm", ".png")

FRAME_PATTERN = "in{index:06d}"
GT_PATTERN = "gt{index:06d}"
SEMANTIC_PATTERN = "sem{index:06d}.pgm"
MASK_PATTERN = "bin{index:06d}"
AVAILABILITY_PATTERN = "avail{index:06d}.pgm"


# ---------------------------------------------------------------------------
# Netpbm
# ---------------------------------------------------------------------------

def _read_bytes(path: Path) -> bytes:
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise IoError(f"文件不存在: {path}") from e
    except OSError as e:
        raise IoError(f"无法读取文件 {path}: {e}") from e
    if not data:
        raise IoError(f"文件为空: {path}")
    return data


def _parse_netpbm(data: bytes, path: Path) -> np.ndarray:
    """
    解析二进制 PGM (P5) / PPM (P6)

    Returns:
        P5 -> (H, W) uint8, P6 -> (H, W, 3) uint8
    """
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"不支持的 Netpbm 类型 {magic!r}: {path}")

    # 头部四个字段：magic, width, height, maxval；'#' 注释到行尾
    fields: List[bytes] = []
    pos = 0
    length = len(data)
    while len(fields) < 4:
        while pos < length and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= length:
            raise FormatError(f"Netpbm 头部不完整: {path}")
        if data[pos:pos + 1] == b"#":
            while pos < length and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < length and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        fields.append(data[start:pos])
    # 头部之后恰好一个空白字符
    pos += 1

    try:
        width, height, maxval = (int(f) for f in fields[1:4])
    except ValueError as e:
        raise FormatError(f"Netpbm 头部不是整数: {path}") from e
    if width <= 0 or height <= 0:
        raise FormatError(f"图像尺寸非法 {width}x{height}: {path}")
    if maxval != 255:
        raise FormatError(f"仅支持 8 位 Netpbm (maxval 255)，实际 maxval={maxval}: {path}")

    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    raster = data[pos:pos + expected]
    if len(raster) < expected:
        raise FormatError(f"Netpbm 数据截断，期望 {expected} 字节，实际 {len(raster)}: {path}")

    array = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return array.reshape(height, width).copy()
    return array.reshape(height, width, 3).copy()


def _write_netpbm(path: Path, array: np.ndarray) -> None:
    if array.ndim == 2:
        header = f"P5\n{array.shape[1]} {array.shape[0]}\n255\n".encode("ascii")
    else:
        header = f"P6\n{array.shape[1]} {array.shape[0]}\n255\n".encode("ascii")
    try:
        ensure_dir(path.parent)
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(array, dtype=np.uint8).tobytes())
    except OSError as e:
        raise IoError(f"无法写入文件 {path}: {e}") from e


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(data: bytes) -> Optional[int]:
    """PNG 每通道位深（IHDR 第 24 字节），非 PNG 返回 None"""
    if data[:8] != PNG_SIGNATURE or data[12:16] != b"IHDR" or len(data) < 25:
        return None
    return data[24]


def _read_with_pillow(path: Path, want_gray: bool) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    data = _read_bytes(path)
    depth = _png_bit_depth(data)
    if depth is not None and depth > 8:
        # Pillow 会把 16 位 RGB(A) PNG 静默截成 8 位
        raise FormatError(f"不支持 {depth} 位 PNG: {path}")
    try:
        with Image.open(path) as image:
            if image.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise FormatError(f"不支持 16 位或浮点图像 (mode={image.mode}): {path}")
            if want_gray:
                if image.mode not in ("L", "1", "P"):
                    raise FormatError(f"需要单通道图像，实际 mode={image.mode}: {path}")
                return np.asarray(image.convert("L"), dtype=np.uint8).copy()
            return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()
    except UnidentifiedImageError as e:
        raise FormatError(f"无法识别的图像编码: {path}") from e
    except OSError as e:
        raise IoError(f"无法读取图像 {path}: {e}") from e


def read_raster(path: PathLike, want_gray: bool = False) -> np.ndarray:
    """读取任意支持格式的 8 位栅格"""
    path = Path(path)
    if path.suffix.lower() in NETPBM_SUFFIXES:
        return _parse_netpbm(_read_bytes(path), path)
    return _read_with_pillow(path, want_gray)


def _check_dims(array: np.ndarray, expected_dims: Optional[Tuple[int, int]], path: Path) -> None:
    if expected_dims is not None and tuple(array.shape[:2]) != tuple(expected_dims):
        raise FormatError(f"尺寸不匹配: 期望 {tuple(expected_dims)}, 实际 {array.shape[:2]}: {path}")


# ---------------------------------------------------------------------------
# 读取
# ---------------------------------------------------------------------------

def load_frame(path: PathLike, expected_dims: Optional[Tuple[int, int]] = None, index: Optional[int] = None) -> Frame:
    """
    读取一帧 RGB 图像，灰度 PGM 复制到三个通道

    Args:
        path: 帧文件路径
        expected_dims: 序列尺寸 (height, width)，不一致时报 FormatError
        index: 帧号，为空时从文件名解析，解析失败则为 1
    """
    path = Path(path)
    array = read_raster(path)
    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)
    _check_dims(array, expected_dims, path)
    if index is None:
        try:
            index = frame_index_from_name(path.name)
        except ValueError:
            index = 1
    return Frame(data=array, index=max(index, 1))


def load_semantic_map(path: PathLike, expected_dims: Optional[Tuple[int, int]] = None, index: int = 1) -> SemanticMap:
    """读取 8 位单通道语义概率图，p = v / 255"""
    path = Path(path)
    array = read_raster(path, want_gray=True)
    if array.ndim != 2:
        raise FormatError(f"语义图必须是单通道: {path}")
    _check_dims(array, expected_dims, path)
    return SemanticMap(values=array, index=index)


def load_ground_truth(path: PathLike, expected_dims: Optional[Tuple[int, int]] = None, index: int = 1) -> GroundTruthMask:
    """读取 CDNet 真值掩膜"""
    path = Path(path)
    array = read_raster(path, want_gray=True)
    _check_dims(array, expected_dims, path)
    try:
        return GroundTruthMask(labels=array, index=index)
    except ValidationError as e:
        raise FormatError(f"真值标签非法 {path}: {e.errors()[0]['msg']}") from e


def load_mask(path: PathLike, expected_dims: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """读取 write_mask 写出的二值掩膜，0 -> BG, 255 -> FG"""
    path = Path(path)
    array = read_raster(path, want_gray=True)
    _check_dims(array, expected_dims, path)
    if not np.isin(array, (0, 255)).all():
        raise FormatError(f"掩膜不是二值 (0/255): {path}")
    return (array == 255).astype(np.uint8)


def load_availability_mask(path: PathLike, expected_dims: Tuple[int, int]) -> np.ndarray:
    """读取逐像素可用性掩膜（0 不可用，255 可用）"""
    array = read_raster(Path(path), want_gray=True)
    _check_dims(array, expected_dims, Path(path))
    return array == 255


# ---------------------------------------------------------------------------
# 写出
# ---------------------------------------------------------------------------

def write_mask(path: PathLike, mask: np.ndarray) -> None:
    """
    写出二值掩膜：BG -> 0, FG -> 255，PGM 或 PNG（按扩展名）
    """
    path = Path(path)
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"掩膜必须是二维数组，实际 {mask.shape}")
    if not np.isin(mask, (Label.BG, Label.FG)).all():
        raise FormatError("掩膜必须只包含 BG/FG")
    image = np.where(mask == Label.FG, 255, 0).astype(np.uint8)
    if path.suffix.lower() in NETPBM_SUFFIXES:
        _write_netpbm(path, image)
        return
    from PIL import Image

    try:
        ensure_dir(path.parent)
        Image.fromarray(image).save(path)
    except OSError as e:
        raise IoError(f"无法写入掩膜 {path}: {e}") from e


def write_frame(path: PathLike, frame: Frame) -> None:
    """写出 PPM 帧"""
    _write_netpbm(Path(path), frame.data)


def write_gray(path: PathLike, array: np.ndarray) -> None:
    """写出 8 位单通道 PGM（语义图、真值、可用性掩膜）"""
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim != 2:
        raise FormatError("PGM 数据必须是二维 uint8")
    _write_netpbm(Path(path), array)


def write_semantic_map(path: PathLike, semantic_map: SemanticMap) -> None:
    write_gray(path, semantic_map.values)


# ---------------------------------------------------------------------------
# CDNet 目录
# ---------------------------------------------------------------------------

def find_indexed_file(directory: Optional[Path], stem: str, suffixes) -> Optional[Path]:
    """在目录中查找 stem + 任一扩展名的文件"""
    if directory is None:
        return None
    for suffix in suffixes:
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def read_temporal_roi(path: Path) -> Tuple[int, int]:
    """解析 temporalROI.txt（两个空白分隔的整数）"""
    try:
        parts = path.read_text(encoding="utf-8").split()
        first, last = int(parts[0]), int(parts[1])
    except (OSError, ValueError, IndexError) as e:
        raise LayoutError(f"temporalROI.txt 格式非法: {path}") from e
    if first > last:
        raise LayoutError(f"temporalROI 起止颠倒 ({first} > {last}): {path}")
    return first, last


def discover_cdnet_sequence(root_path: PathLike) -> SequenceDescriptor:
    """
    识别一个 CDNet 布局的视频目录

    Raises:
        LayoutError: 缺少 input/ 目录、帧号重复或 temporalROI 非法
    """
    root = Path(root_path)
    frames_dir = root / "input"
    if not frames_dir.is_dir():
        raise LayoutError(f"缺少 input/ 目录: {root}")

    indexed: Dict[int, Path] = {}
    for entry in frames_dir.iterdir():
        if not entry.is_file() or entry.suffix.lower() not in FRAME_SUFFIXES:
            continue
        try:
            index = frame_index_from_name(entry.name)
        except ValueError:
            logger.warning(f"跳过无帧号的文件: {entry}")
            continue
        if index in indexed:
            raise LayoutError(f"帧号重复 {index}: {indexed[index].name} / {entry.name}")
        indexed[index] = entry
    if not indexed:
        raise LayoutError(f"input/ 中没有帧: {frames_dir}")

    gt_dir = root / "groundtruth"
    semantic_dir = root / "semantic"
    roi_file = root / "temporalROI.txt"
    roi_path = find_indexed_file(root, "ROI", (".bmp", ".pgm", ".png"))

    descriptor = SequenceDescriptor(
        name=root.name,
        root=root,
        frames_dir=frames_dir,
        frame_files=[indexed[i] for i in sorted(indexed)],
        gt_dir=gt_dir if gt_dir.is_dir() else None,
        semantic_dir=semantic_dir if semantic_dir.is_dir() else None,
        temporal_roi=read_temporal_roi(roi_file) if roi_file.is_file() else None,
        roi_path=roi_path,
        category=root.parent.name,
    )
    logger.debug(
        f"识别序列 {descriptor.name}: {descriptor.num_frames} 帧, "
        f"真值={'有' if descriptor.gt_dir else '无'}, 语义={'有' if descriptor.semantic_dir else '无'}, "
        f"temporalROI={descriptor.temporal_roi}"
    )
    return descriptor


def discover_sequences(root_path: PathLike) -> List[SequenceDescriptor]:
    """递归识别 root 下所有包含 input/ 的序列，按路径排序"""
    root = Path(root_path)
    if not root.is_dir():
        raise LayoutError(f"目录不存在: {root}")
    if (root / "input").is_dir():
        return [discover_cdnet_sequence(root)]

    sequences = []
    for dirpath, dirnames, _ in os.walk(root):
        dirnames.sort()
        if "input" in dirnames:
            sequences.append(discover_cdnet_sequence(dirpath))
            dirnames[:] = []
    if not sequences:
        raise LayoutError(f"{root} 下没有任何 CDNet 序列")
    logger.info(f"在 {root} 下识别到 {len(sequences)} 个序列")
    return sequences


class LoadedSequence(BaseModel):
    """载入内存的序列（帧、真值、语义图），供 sweep / optimize 重复评估"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    descriptor: SequenceDescriptor
    frames: List[Frame]
    ground_truth: Dict[int, GroundTruthMask] = {}
    semantic_maps: Dict[int, SemanticMap] = {}
    roi_mask: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape


def semantic_map_path(descriptor: SequenceDescriptor, index: int) -> Optional[Path]:
    if descriptor.semantic_dir is None:
        return None
    path = descriptor.semantic_dir / SEMANTIC_PATTERN.format(index=index)
    return path if path.is_file() else None


def ground_truth_path(descriptor: SequenceDescriptor, index: int) -> Optional[Path]:
    return find_indexed_file(descriptor.gt_dir, GT_PATTERN.format(index=index), GT_SUFFIXES)


def load_roi_mask(descriptor: SequenceDescriptor, dims: Tuple[int, int]) -> Optional[np.ndarray]:
    """空间 ROI：非零像素为 ROI 内"""
    if descriptor.roi_path is None:
        return None
    array = read_raster(descriptor.roi_path, want_gray=True)
    _check_dims(array, dims, descriptor.roi_path)
    return array > 0


def load_sequence(descriptor: SequenceDescriptor, with_semantics: bool = True) -> LoadedSequence:
    """将整个序列载入内存；缺失的语义图视为该帧语义不可用"""
    frames: List[Frame] = []
    ground_truth: Dict[int, GroundTruthMask] = {}
    semantic_maps: Dict[int, SemanticMap] = {}
    dims: Optional[Tuple[int, int]] = None

    for path in descriptor.frame_files:
        frame = load_frame(path, expected_dims=dims)
        dims = frame.shape
        frames.append(frame)
        gt_path = ground_truth_path(descriptor, frame.index)
        if gt_path is not None:
            ground_truth[frame.index] = load_ground_truth(gt_path, dims, frame.index)
        if with_semantics:
            sem_path = semantic_map_path(descriptor, frame.index)
            if sem_path is not None:
                semantic_maps[frame.index] = load_semantic_map(sem_path, dims, frame.index)

    logger.info(
        f"序列 {descriptor.name} 载入完成: {len(frames)} 帧, {len(ground_truth)} 张真值, "
        f"{len(semantic_maps)} 张语义图"
    )
    return LoadedSequence(
        descriptor=descriptor,
        frames=frames,
        ground_truth=ground_truth,
        semantic_maps=semantic_maps,
        roi_mask=load_roi_mask(descriptor, dims),
    )
