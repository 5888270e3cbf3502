"""
序列运行服务
逐帧读取视频、运行融合流水线、写出 bin%06d.pgm 掩膜并即时评估；
计算耗时与磁盘读写耗时分开统计，用于检查实时性。
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Union
import time

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.schemas import Confusion, PipelineConfig, SequenceDescriptor
from app.services.evaluation import accumulate, confusion_table, log_confusion, score_report, write_csv
from app.services.frame_io import (
    MASK_PATTERN,
    ground_truth_path,
    load_frame,
    load_ground_truth,
    load_roi_mask,
    load_semantic_map,
    semantic_map_path,
    write_mask,
)
from app.services.fusion import RtSbsPipeline
from app.utils.helpers import ensure_dir, format_fps
from app.utils.logger import get_logger, log_performance

logger = get_logger("runner")


class RunSummary(BaseModel):
    """单个视频的运行结果"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    video: str
    category: str = ""
    frames: int = 0
    confusion: Confusion = Field(default_factory=Confusion)
    compute_seconds: float = 0.0
    io_seconds: float = 0.0
    masks_dir: Optional[Path] = None

    @property
    def fps(self) -> float:
        return self.frames / self.compute_seconds if self.compute_seconds > 0 else float("inf")


class SequenceRunner:
    """跑一个视频；每个实例持有自己的流水线，互不共享状态"""

    def __init__(self, descriptor: SequenceDescriptor, config: PipelineConfig, out_dir: Optional[Union[str, Path]] = None):
        self.descriptor = descriptor
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.pipeline = RtSbsPipeline(config)
        self.logger = get_logger("runner")

    def run(self) -> RunSummary:
        summary = RunSummary(video=self.descriptor.name, category=self.descriptor.category)
        masks_dir = ensure_dir(self.out_dir / self.descriptor.name) if self.out_dir is not None else None
        summary.masks_dir = masks_dir
        roi_mask = None
        dims = None

        for path in self.descriptor.frame_files:
            io_start = time.perf_counter()
            frame = load_frame(path, expected_dims=dims)
            t = frame.index
            if dims is None:
                dims = frame.shape
                roi_mask = load_roi_mask(self.descriptor, dims)

            available = self.pipeline.availability(t, dims)
            semantic_map = None
            if available.any():
                sem_path = semantic_map_path(self.descriptor, t)
                if sem_path is None:
                    self.logger.warning(f"[{self.descriptor.name}] 第 {t} 帧缺少语义图，按无语义信息处理")
                    available = np.zeros(dims, dtype=bool)
                else:
                    semantic_map = load_semantic_map(sem_path, dims, t)
            gt = None
            if self.descriptor.in_temporal_roi(t):
                gt_path = ground_truth_path(self.descriptor, t)
                if gt_path is not None:
                    gt = load_ground_truth(gt_path, dims, t)
            summary.io_seconds += time.perf_counter() - io_start

            compute_start = time.perf_counter()
            result = self.pipeline.process_frame(frame, semantic_map, t, availability=available)
            summary.compute_seconds += time.perf_counter() - compute_start

            io_start = time.perf_counter()
            if masks_dir is not None:
                write_mask(masks_dir / f"{MASK_PATTERN.format(index=t)}.pgm", result.output_mask)
            summary.io_seconds += time.perf_counter() - io_start

            if gt is not None:
                accumulate(summary.confusion, result.output_mask, gt, roi_mask)
            summary.frames += 1

        log_performance(
            self.logger,
            f"run[{self.descriptor.name}]",
            summary.compute_seconds * 1000,
            f"{summary.frames} 帧, {format_fps(summary.frames, summary.compute_seconds)}, I/O {summary.io_seconds:.2f}s",
        )
        log_confusion(self.descriptor.name, summary.confusion)
        return summary


def run_sequence(descriptor: SequenceDescriptor, config: PipelineConfig, out_dir: Optional[Union[str, Path]] = None) -> RunSummary:
    return SequenceRunner(descriptor, config, out_dir).run()


def run_sequences(
    descriptors: Sequence[SequenceDescriptor],
    config: PipelineConfig,
    out_dir: Optional[Union[str, Path]] = None,
    parallel_videos: int = 1,
) -> List[RunSummary]:
    """按顺序（或以 parallel_videos 个线程）运行多个视频，返回顺序与输入一致"""
    if parallel_videos > 1 and len(descriptors) > 1:
        with ThreadPoolExecutor(max_workers=parallel_videos) as executor:
            return list(executor.map(lambda d: run_sequence(d, config, out_dir), descriptors))
    return [run_sequence(d, config, out_dir) for d in descriptors]


def write_run_report(summaries: Sequence[RunSummary], path: Union[str, Path]) -> Path:
    """report.csv：video,tp,fp,fn,tn,f1"""
    return write_csv(confusion_table({s.video: s.confusion for s in summaries}), path)


def overall_f1(summaries: Sequence[RunSummary]) -> Optional[float]:
    return score_report(
        {s.video: s.confusion for s in summaries},
        {s.video: s.category for s in summaries},
    ).overall


def total_fps(summaries: Sequence[RunSummary]) -> float:
    frames = sum(s.frames for s in summaries)
    seconds = sum(s.compute_seconds for s in summaries)
    return frames / seconds if seconds > 0 else float("inf")


__all__ = [
    "RunSummary",
    "SequenceRunner",
    "run_sequence",
    "run_sequences",
    "write_run_report",
    "overall_f1",
    "total_fps",
]
