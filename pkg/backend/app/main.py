"""
命令行入口
子命令：synth（生成合成序列）、run（运行并写出掩膜）、eval（评估已有掩膜）、
sweep（F1 随 X 变化）、optimize（阈值搜索）

用法: python -m app.main <子命令> [参数]
退出码: 0 成功；1 配置错误；2 数据错误
"""
import argparse
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from dotenv import dotenv_values
from pydantic import ValidationError

from app.config import settings
from app.models.schemas import PipelineConfig, SynthSpec
from app.services.evaluation import (
    REFERENCE_TOLERANCE,
    aggregate_scores,
    confusion_table,
    evaluate_masks,
    reference_report,
    score_report,
    sweep,
    write_csv,
)
from app.services.frame_io import discover_sequences, load_sequence
from app.services.fusion import MODE_ALIASES, config_for_mode
from app.services.optimizer import (
    TRIAL_COLUMNS,
    SearchSpace,
    optimize_global,
    per_x_tuner,
    scene_specific,
    write_trial_log,
)
from app.services.runner import overall_f1, run_sequences, total_fps, write_run_report
from app.services.synth import random_objects, synth, synth_suite
from app.utils.errors import ConfigError, IoError, RtsbsError
from app.utils.helpers import ensure_dir, format_fps, parse_int_list, parse_name_list, parse_size
from app.utils.logger import get_logger, log_exception

logger = get_logger("cli")

# CLI 参数名 -> 配置键
PIPELINE_FLAGS = {
    "tau_bg": "tau_bg",
    "tau_fg": "tau_fg",
    "tau_star_bg": "tau_star_bg",
    "tau_star_fg": "tau_star_fg",
    "x": "x",
    "schedule": "schedule",
    "avail_dir": "avail_dir",
    "n": "n",
    "r": "r",
    "min_matches": "min_matches",
    "phi": "phi",
    "phi_s": "phi_s",
    "metric": "metric",
    "seed": "seed",
    "post_filter": "post_filter",
    "semantic_feedback": "semantic_feedback",
}


class CliParser(argparse.ArgumentParser):
    """参数错误按配置错误处理（退出码 1）"""

    def error(self, message):
        raise ConfigError(message)


def _add_pipeline_flags(parser: argparse.ArgumentParser, with_x: bool = True) -> None:
    group = parser.add_argument_group("pipeline")
    group.add_argument("--config", help="流水线配置文件（key=value）")
    group.add_argument("--mode", help=f"融合模式: {', '.join(MODE_ALIASES)}")
    if with_x:
        group.add_argument("--x", type=int, help="语义帧率 X:1")
    group.add_argument("--schedule", choices=["subsample", "explicit", "never"])
    group.add_argument("--avail-dir", help="explicit 调度的 avail%%06d.pgm 目录")
    group.add_argument("--feedback", action=argparse.BooleanOptionalAction, default=None)
    group.add_argument("--semantic-feedback", action=argparse.BooleanOptionalAction, default=None)
    group.add_argument("--post-filter", action=argparse.BooleanOptionalAction, default=None)
    group.add_argument("--tau-bg", type=float)
    group.add_argument("--tau-fg", type=float)
    group.add_argument("--tau-star-bg", type=float)
    group.add_argument("--tau-star-fg", type=float)
    group.add_argument("--n", type=int, help="ViBe 样本数 N")
    group.add_argument("--r", type=int, help="ViBe 匹配半径 R")
    group.add_argument("--min-matches", type=int)
    group.add_argument("--phi", type=int, help="ViBe 更新子采样因子")
    group.add_argument("--phi-s", type=int, help="语义模型更新子采样因子")
    group.add_argument("--metric", choices=["l1", "l2"])
    group.add_argument("--seed", type=int)


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    """读取 key=value 配置文件，键统一转小写"""
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"配置文件不存在: {config_path}")
    return {str(k).strip().lower(): v for k, v in dotenv_values(config_path).items()}


def load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """
    合并配置：默认值 <- 配置文件 <- 命令行
    mode 的别名（如 rtsbs-fb）先生效，显式给出的 feedback 再覆盖它
    """
    flat = read_config_file(args.config or settings.default_config_file)
    for attr, key in PIPELINE_FLAGS.items():
        value = getattr(args, attr, None)
        if attr == "x" and isinstance(value, str):
            continue
        if value is not None:
            flat[key] = value
    if args.mode is not None:
        flat["mode"] = args.mode
    if args.feedback is not None:
        flat["feedback"] = args.feedback

    mode = flat.pop("mode", None)
    feedback = flat.pop("feedback", None)
    config = PipelineConfig.from_flat(flat)
    if mode:
        config = config_for_mode(config, str(mode))
    if feedback is not None:
        config = PipelineConfig.from_flat({"feedback": feedback}, config)
    logger.debug(f"流水线配置: {config.to_flat()}")
    return config


def write_config_file(config: PipelineConfig, path: Path) -> Path:
    """写出 key=value 配置文件，可再由 --config 读入"""
    lines = []
    for key, value in config.to_flat().items():
        text = str(value).lower() if isinstance(value, bool) else value
        lines.append(f"{key}={text}\n")
    path.write_text("".join(lines), encoding="utf-8")
    return path


def _load_sequences(data: str):
    return [load_sequence(d) for d in discover_sequences(data)]


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def build_synth_spec(args: argparse.Namespace) -> SynthSpec:
    """
    由命令行参数构建 SynthSpec；给出 --objects 时按 --seed 生成随机目标，否则用默认目标

    Raises:
        ConfigError: 参数超出取值范围
    """
    values: Dict[str, Any] = dict(
        width=args.width,
        height=args.height,
        num_frames=args.frames,
        background=args.background,
        noise_sigma=args.noise_sigma,
        semantic_fidelity=args.fidelity,
    )
    try:
        if args.objects is not None:
            size = parse_size(args.object_size, "--object-size")
            values["objects"] = random_objects(args.objects, size, args.seed, args.max_speed)
        return SynthSpec(**values)
    except ValidationError as e:
        raise ConfigError(f"合成参数非法: {e}") from e


def cmd_synth(args: argparse.Namespace) -> int:
    spec = build_synth_spec(args)
    if args.videos is None:
        synth(spec, args.out, args.seed)
    else:
        synth_suite(spec, args.out, args.videos, args.seed)
    print(f"synthetic data written to {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args)
    descriptors = discover_sequences(args.data)
    out_dir = ensure_dir(args.out)
    start = time.perf_counter()
    summaries = run_sequences(descriptors, config, out_dir, args.parallel_videos)
    wall = time.perf_counter() - start

    write_run_report(summaries, out_dir / "report.csv")
    for s in summaries:
        print(f"{s.video}: {format_fps(s.frames, s.compute_seconds)} compute, I/O {s.io_seconds:.2f}s")
    score = overall_f1(summaries)
    print(f"overall F1: {'n/a' if score is None else f'{score:.4f}'}")
    print(f"compute: {total_fps(summaries):.1f} fps, I/O: {sum(s.io_seconds for s in summaries):.2f}s, wall: {wall:.2f}s")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    descriptors = discover_sequences(args.data)
    masks_root = Path(args.masks)
    confusions = {}
    for descriptor in descriptors:
        masks_dir = masks_root / descriptor.name
        if not masks_dir.is_dir():
            raise IoError(f"缺少视频 {descriptor.name} 的掩膜目录: {masks_dir}")
        confusions[descriptor.name] = evaluate_masks(descriptor, masks_dir)
    report = score_report(confusions, {d.name: d.category for d in descriptors})
    write_csv(confusion_table(confusions), args.report or masks_root / "eval_report.csv")
    print(f"overall F1: {'n/a' if report.overall is None else f'{report.overall:.4f}'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args)
    xs = parse_int_list(args.x, "--x")
    modes = parse_name_list(args.modes)
    unknown = [m for m in modes if m not in MODE_ALIASES]
    if unknown:
        raise ConfigError(f"未知模式: {unknown}")
    sequences = _load_sequences(args.data)
    tune = None
    if args.optimize_per_x:
        tune = per_x_tuner(
            sequences, SearchSpace(), args.budget, args.search_seed,
            refine_rounds=args.refine_rounds, max_workers=args.parallel_videos,
        )
    table = sweep(sequences, config, xs, modes, args.parallel_videos, tune)
    if args.out:
        write_csv(table, args.out)
    else:
        table.to_csv(sys.stdout, index=False)
    if args.reference_report:
        reference = reference_report(table)
        write_csv(reference, args.reference_report)
        for row in reference.itertuples():
            score = "n/a" if pd.isna(row.overall_f1) else f"{row.overall_f1:.3f}"
            verdict = "ok" if row.within_tolerance else "outside"
            print(f"{row.mode} X={row.X}: F1 {score} vs reference {row.reference_f1:.3f} ± {REFERENCE_TOLERANCE} ({verdict})")
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args)
    sequences = _load_sequences(args.data)
    out_dir = ensure_dir(args.out)
    space = SearchSpace()
    trials: List = []
    best = optimize_global(
        sequences, config, space, args.budget, args.search_seed,
        refine_rounds=args.refine_rounds, max_workers=args.parallel_videos, trial_log=trials,
    )
    write_trial_log(trials, out_dir / "trials.csv")
    best_config = best.params.apply(config)
    write_config_file(best_config, out_dir / "best_config.env")
    print(f"best: {best.params.as_tuple()} overall F1={best.score}")

    if args.scene_specific:
        per_video = scene_specific(
            sequences, config, space, args.budget, args.search_seed,
            global_best=best.params, refine_rounds=args.refine_rounds, max_workers=args.parallel_videos,
        )
        table = pd.DataFrame(
            [{"video": video, **trial.params.model_dump(), "f1": trial.score} for video, trial in per_video.items()],
            columns=["video"] + TRIAL_COLUMNS[1:],
        )
        write_csv(table, out_dir / "scene_specific.csv")
        report = aggregate_scores(
            {video: trial.score for video, trial in per_video.items()},
            {s.name: s.descriptor.category for s in sequences},
        )
        print(f"scene-specific overall F1={report.overall}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="rtsbs", description="实时语义背景减除（ViBe + 缓存语义 + 变化检测）")
    parser.add_argument("--version", action="version", version=f"{settings.app_name} {settings.app_version}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("synth", help="生成合成序列")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, help="生成 seq001.. 共 k 个视频")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--background", choices=["constant", "gradient"], default="constant")
    p.add_argument("--noise-sigma", type=float, default=8.0)
    p.add_argument("--fidelity", type=float, default=0.9)
    p.add_argument("--objects", type=int, help="随机生成的目标数量（缺省为两个固定目标）")
    p.add_argument("--object-size", default="32x24", help="随机目标尺寸 WxH")
    p.add_argument("--max-speed", type=int, default=4, help="随机目标每帧最大位移（像素）")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("run", help="运行流水线并写出掩膜")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="results")
    p.add_argument("--parallel-videos", type=int, default=1)
    _add_pipeline_flags(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("eval", help="评估已有掩膜")
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True, help="包含 <video>/bin%%06d.pgm 的目录")
    p.add_argument("--report")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="F1 随 X 变化")
    p.add_argument("--data", required=True)
    p.add_argument("--x", default="1,2,5,10,25", help="逗号分隔的 X 列表")
    p.add_argument("--modes", default=",".join(MODE_ALIASES))
    p.add_argument("--out")
    p.add_argument("--parallel-videos", type=int, default=1)
    p.add_argument("--optimize-per-x", action="store_true", help="对每个 (模式, X) 单独搜索阈值")
    p.add_argument("--budget", type=int, default=20, help="--optimize-per-x 每组的随机采样次数")
    p.add_argument("--search-seed", type=int, default=0)
    p.add_argument("--refine-rounds", type=int, default=1)
    p.add_argument("--reference-report", help="写出与 CDNet 2014 发表分数的对照表（CSV）")
    _add_pipeline_flags(p, with_x=False)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("optimize", help="阈值搜索")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="optimize")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--search-seed", type=int, default=0)
    p.add_argument("--refine-rounds", type=int, default=1)
    p.add_argument("--scene-specific", action="store_true")
    p.add_argument("--parallel-videos", type=int, default=1)
    _add_pipeline_flags(p)
    p.set_defaults(handler=cmd_optimize)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except RtsbsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        log_exception(logger, f"I/O 失败: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
