"""
评估服务
CDNet 约定的逐帧混淆计数、F1、视频 / 类别 / 总体得分，以及 F1 随 X 变化的扫描表
"""
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
import time

import numpy as np
import pandas as pd

from app.models.schemas import (
    GT_MOVING,
    GT_SHADOW,
    GT_STATIC,
    Confusion,
    FusionMode,
    GroundTruthMask,
    Label,
    PipelineConfig,
    ScoreReport,
    SequenceDescriptor,
)
from app.services.frame_io import (
    MASK_PATTERN,
    MASK_SUFFIXES,
    LoadedSequence,
    find_indexed_file,
    ground_truth_path,
    load_ground_truth,
    load_mask,
    load_roi_mask,
)
from app.services.fusion import RtSbsPipeline, config_for_mode
from app.utils.errors import IoError, check_same_shape
from app.utils.helpers import ensure_dir, frame_index_from_name
from app.utils.logger import get_logger, log_performance

logger = get_logger("evaluation")

SWEEP_COLUMNS = ["mode", "X", "overall_f1"]
TUNED_SWEEP_COLUMNS = SWEEP_COLUMNS + ["tau_bg", "tau_fg", "tau_star_bg", "tau_star_fg"]
REPORT_COLUMNS = ["video", "tp", "fp", "fn", "tn", "f1"]

# 调参回调：输入已设定模式与 X 的配置，返回带最优阈值的配置
Tuner = Callable[[PipelineConfig], PipelineConfig]


def frame_confusion(
    predicted: np.ndarray,
    gt: GroundTruthMask,
    roi_mask: Optional[np.ndarray] = None,
) -> Confusion:
    """单帧混淆计数：85 / 170 跳过，0 / 50 为负样本，255 为正样本"""
    check_same_shape(gt.shape, predicted.shape, "预测掩膜")
    labels = gt.labels
    negative = (labels == GT_STATIC) | (labels == GT_SHADOW)
    positive = labels == GT_MOVING
    if roi_mask is not None:
        check_same_shape(gt.shape, roi_mask.shape, "空间 ROI")
        negative &= roi_mask
        positive &= roi_mask
    foreground = predicted == Label.FG
    return Confusion(
        tp=int(np.count_nonzero(positive & foreground)),
        fp=int(np.count_nonzero(negative & foreground)),
        fn=int(np.count_nonzero(positive & ~foreground)),
        tn=int(np.count_nonzero(negative & ~foreground)),
    )


def accumulate(
    conf: Confusion,
    predicted: np.ndarray,
    gt: GroundTruthMask,
    roi_mask: Optional[np.ndarray] = None,
    temporal_roi: Optional[Tuple[int, int]] = None,
) -> Confusion:
    """
    把一帧的计数累加到 conf（原地）并返回 conf
    gt.index 不在 temporal_roi 内时整帧跳过
    """
    if temporal_roi is not None and not (temporal_roi[0] <= gt.index <= temporal_roi[1]):
        check_same_shape(gt.shape, predicted.shape, "预测掩膜")
        return conf
    counts = frame_confusion(predicted, gt, roi_mask)
    conf.tp += counts.tp
    conf.fp += counts.fp
    conf.fn += counts.fn
    conf.tn += counts.tn
    return conf


def f1(conf: Confusion) -> Optional[float]:
    """2TP / (2TP + FP + FN)，分母为 0 时返回 None"""
    denominator = 2 * conf.tp + conf.fp + conf.fn
    if denominator == 0:
        return None
    return 2 * conf.tp / denominator


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def aggregate_scores(per_video: Mapping[str, Optional[float]], categories: Optional[Mapping[str, str]] = None) -> ScoreReport:
    """
    视频 F1 -> 类别内平均 -> 类别间平均；未定义的 F1 不参与平均
    没有类别信息时所有视频归入同一类，总体即视频平均
    """
    categories = categories or {}
    members: Dict[str, List[Optional[float]]] = defaultdict(list)
    for video, score in per_video.items():
        members[categories.get(video, "")].append(score)
    per_category = {category: _mean(scores) for category, scores in members.items()}
    return ScoreReport(per_video=dict(per_video), per_category=per_category, overall=_mean(per_category.values()))


def score_report(confusions: Mapping[str, Confusion], categories: Optional[Mapping[str, str]] = None) -> ScoreReport:
    return aggregate_scores({video: f1(conf) for video, conf in confusions.items()}, categories)


def evaluate_results(sequence: LoadedSequence, masks: Mapping[int, np.ndarray]) -> Confusion:
    """用内存中的真值评估一段视频的输出掩膜"""
    conf = Confusion()
    temporal_roi = sequence.descriptor.temporal_roi
    for index, gt in sequence.ground_truth.items():
        if not sequence.descriptor.in_temporal_roi(index) or index not in masks:
            continue
        accumulate(conf, masks[index], gt, sequence.roi_mask, temporal_roi)
    return conf


def evaluate_masks(descriptor: SequenceDescriptor, masks_dir: Union[str, Path]) -> Confusion:
    """
    读取磁盘上的 bin%06d 掩膜并与真值比较（eval 子命令）

    Raises:
        IoError: temporal ROI 内某帧有真值但没有掩膜
    """
    masks_dir = Path(masks_dir)
    conf = Confusion()
    roi_mask = None
    for path in descriptor.frame_files:
        index = frame_index_from_name(path.name)
        if not descriptor.in_temporal_roi(index):
            continue
        gt_path = ground_truth_path(descriptor, index)
        if gt_path is None:
            continue
        gt = load_ground_truth(gt_path, index=index)
        if roi_mask is None and descriptor.roi_path is not None:
            roi_mask = load_roi_mask(descriptor, gt.shape)
        mask_path = find_indexed_file(masks_dir, MASK_PATTERN.format(index=index), MASK_SUFFIXES)
        if mask_path is None:
            raise IoError(f"缺少第 {index} 帧的结果掩膜: {masks_dir}")
        accumulate(conf, load_mask(mask_path, gt.shape), gt, roi_mask)
    log_confusion(descriptor.name, conf)
    return conf


def log_confusion(video: str, conf: Confusion) -> None:
    precision = "n/a" if conf.precision is None else f"{conf.precision:.4f}"
    recall = "n/a" if conf.recall is None else f"{conf.recall:.4f}"
    score = f1(conf)
    logger.info(
        f"[{video}] TP={conf.tp} FP={conf.fp} FN={conf.fn} TN={conf.tn} "
        f"precision={precision} recall={recall} F1={'n/a' if score is None else f'{score:.4f}'}"
    )


# ---------------------------------------------------------------------------
# 运行 + 评估
# ---------------------------------------------------------------------------

def run_and_score(sequence: LoadedSequence, config: PipelineConfig) -> Confusion:
    """在内存中的视频上跑一遍流水线并累计混淆计数"""
    pipeline = RtSbsPipeline(config)
    conf = Confusion()
    results = pipeline.run(sequence.frames, sequence.semantic_maps)
    for frame, result in zip(sequence.frames, results):
        gt = sequence.ground_truth.get(frame.index)
        if gt is None or not sequence.descriptor.in_temporal_roi(frame.index):
            continue
        accumulate(conf, result.output_mask, gt, sequence.roi_mask)
    return conf


def evaluate_config(
    sequences: Sequence[LoadedSequence],
    config: PipelineConfig,
    max_workers: Optional[int] = None,
) -> Tuple[ScoreReport, Dict[str, Confusion]]:
    """对一组视频评估同一份配置，视频之间互不共享状态，可并行"""
    if max_workers and max_workers > 1 and len(sequences) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            confusions = list(executor.map(lambda s: run_and_score(s, config), sequences))
    else:
        confusions = [run_and_score(s, config) for s in sequences]
    per_video = {s.name: c for s, c in zip(sequences, confusions)}
    categories = {s.name: s.descriptor.category for s in sequences}
    return score_report(per_video, categories), per_video


def sweep(
    sequences: Sequence[LoadedSequence],
    config: PipelineConfig,
    xs: Sequence[int],
    modes: Sequence[str] = ("vibe", "sbs", "rtsbs", "rtsbs-fb", "never", "always"),
    max_workers: Optional[int] = None,
    tune: Optional[Tuner] = None,
) -> pd.DataFrame:
    """
    F1 随语义帧率 X:1 变化的扫描表，每个 (模式, X) 一行
    不使用语义的模式与 X 无关，只运行一次

    Args:
        tune: 给出时对每个使用语义的 (模式, X) 先调参再评估，
              表中追加实际使用的四个阈值
    """
    rows = []
    start = time.perf_counter()
    for mode_name in modes:
        mode_config = config_for_mode(config, mode_name)
        constant_row: Optional[dict] = None
        semantics_unused = mode_config.mode == FusionMode.PURE_BGS
        for x in xs:
            if semantics_unused and constant_row is not None:
                row = {**constant_row, "X": x}
            else:
                run_config = mode_config.model_copy(
                    update={"schedule": mode_config.schedule.model_copy(update={"kind": "subsample", "x": x})}
                )
                if tune is not None and not semantics_unused:
                    run_config = tune(run_config)
                report, _ = evaluate_config(sequences, run_config, max_workers)
                row = {
                    "mode": mode_name,
                    "X": x,
                    "overall_f1": report.overall,
                    "tau_bg": run_config.semantic.tau_bg,
                    "tau_fg": run_config.semantic.tau_fg,
                    "tau_star_bg": run_config.change.tau_star_bg,
                    "tau_star_fg": run_config.change.tau_star_fg,
                }
                constant_row = row
            logger.info(f"sweep mode={mode_name} X={x} overall_f1={row['overall_f1']}")
            rows.append(row)
    log_performance(logger, "sweep", (time.perf_counter() - start) * 1000, f"{len(rows)} 组")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS if tune is None else TUNED_SWEEP_COLUMNS)


# ---------------------------------------------------------------------------
# 与 CDNet 2014 全量结果对照
# ---------------------------------------------------------------------------

# (模式, X) -> CDNet 2014 上发表的总体 F1（ViBe + 语义反馈）
REFERENCE_F1: Dict[Tuple[str, int], float] = {("rtsbs-fb", 5): 0.746, ("rtsbs-fb", 10): 0.734}
REFERENCE_TOLERANCE = 0.03
REFERENCE_COLUMNS = ["mode", "X", "reference_f1", "overall_f1", "delta", "within_tolerance"]


def reference_report(
    table: pd.DataFrame,
    references: Optional[Mapping[Tuple[str, int], float]] = None,
    tolerance: float = REFERENCE_TOLERANCE,
) -> pd.DataFrame:
    """
    把扫描表与发表的参考分数逐项对照；扫描表缺少该组或 F1 未定义时 within_tolerance 为 False
    只在本地提供 CDNet 2014 与语义图时有意义，合成数据上不做此检查
    """
    references = REFERENCE_F1 if references is None else references
    rows = []
    for (mode, x), expected in references.items():
        match = table[(table["mode"] == mode) & (table["X"] == x)]
        score = match["overall_f1"].iloc[0] if len(match) else None
        if score is None or pd.isna(score):
            rows.append({"mode": mode, "X": x, "reference_f1": expected, "overall_f1": None,
                         "delta": None, "within_tolerance": False})
            continue
        delta = float(score) - expected
        rows.append({"mode": mode, "X": x, "reference_f1": expected, "overall_f1": float(score),
                     "delta": delta, "within_tolerance": abs(delta) <= tolerance})
    report = pd.DataFrame(rows, columns=REFERENCE_COLUMNS)
    for row in report.itertuples():
        logger.info(f"参考对照 mode={row.mode} X={row.X}: F1={row.overall_f1} 参考 {row.reference_f1} ± {tolerance}")
    return report


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def confusion_table(confusions: Mapping[str, Confusion]) -> pd.DataFrame:
    rows = [
        {"video": video, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn, "f1": f1(c)}
        for video, c in confusions.items()
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_csv(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        ensure_dir(path.parent)
        table.to_csv(path, index=False)
    except OSError as e:
        raise IoError(f"无法写入 CSV {path}: {e}") from e
    logger.info(f"已写出 {path} ({len(table)} 行)")
    return path
