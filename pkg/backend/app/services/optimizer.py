"""
阈值优化服务
在 (tau_BG, tau_FG, tau*_BG, tau*_FG) 上做随机搜索 + 坐标爬山，目标为总体 F1。
支持全局优化与逐视频（场景相关）优化；基线参数总是作为第 0 个试验，
因此返回结果不会比基线差。
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import time

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from app.models.schemas import MAX_L1_DISTANCE, PipelineConfig, ThresholdSet, Trial
from app.services.evaluation import Tuner, evaluate_config, write_csv
from app.services.frame_io import LoadedSequence
from app.utils.errors import ConfigError, ObjectiveError, RtsbsError
from app.utils.logger import get_logger, log_performance

logger = get_logger("optimizer")

Objective = Callable[[ThresholdSet], Optional[float]]

TRIAL_COLUMNS = ["trial", "tau_bg", "tau_fg", "tau_star_bg", "tau_star_fg", "f1"]
AXES = ("tau_bg", "tau_fg", "tau_star_bg", "tau_star_fg")
DEFAULT_DELTAS: Dict[str, float] = {"tau_bg": 0.02, "tau_fg": 0.02, "tau_star_bg": 5, "tau_star_fg": 5}


class SearchSpace(BaseModel):
    """搜索空间：两个概率阈值按 step 取网格，两个颜色距离阈值取整数；边界与参数模型的合法范围一致"""
    tau_bg: Tuple[float, float] = (0.0, 1.0)
    tau_fg: Tuple[float, float] = (-1.0, 1.0)
    tau_star_bg: Tuple[int, int] = (-1, MAX_L1_DISTANCE)
    tau_star_fg: Tuple[int, int] = (-1, MAX_L1_DISTANCE)
    step: float = Field(default=0.01, gt=0.0)

    @model_validator(mode="after")
    def check_bounds(self):
        for name, floor in (("tau_bg", 0.0), ("tau_fg", -1.0)):
            low, high = getattr(self, name)
            if not floor <= low <= high <= 1.0:
                raise ValueError(f"{name} 边界非法: {(low, high)}")
        for name in ("tau_star_bg", "tau_star_fg"):
            low, high = getattr(self, name)
            if not -1 <= low <= high <= MAX_L1_DISTANCE:
                raise ValueError(f"{name} 边界非法: {(low, high)}")
        return self

    def _grid_value(self, value: float, bounds: Tuple[float, float]) -> float:
        low, high = bounds
        snapped = round(round(value / self.step) * self.step, 6)
        return float(min(max(snapped, low), high))

    def clip(self, params: Dict[str, float]) -> ThresholdSet:
        """把任意取值吸附到网格并截断到边界"""
        return ThresholdSet(
            tau_bg=self._grid_value(params["tau_bg"], self.tau_bg),
            tau_fg=self._grid_value(params["tau_fg"], self.tau_fg),
            tau_star_bg=int(min(max(round(params["tau_star_bg"]), self.tau_star_bg[0]), self.tau_star_bg[1])),
            tau_star_fg=int(min(max(round(params["tau_star_fg"]), self.tau_star_fg[0]), self.tau_star_fg[1])),
        )

    def _sample_prob(self, rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
        low = int(np.ceil(round(bounds[0] / self.step, 6)))
        high = int(np.floor(round(bounds[1] / self.step, 6)))
        return round(int(rng.integers(low, high + 1)) * self.step, 6)

    def sample(self, rng: np.random.Generator) -> ThresholdSet:
        """均匀抽取一个网格点，每次固定消耗四个随机数"""
        return ThresholdSet(
            tau_bg=self._sample_prob(rng, self.tau_bg),
            tau_fg=self._sample_prob(rng, self.tau_fg),
            tau_star_bg=int(rng.integers(self.tau_star_bg[0], self.tau_star_bg[1] + 1)),
            tau_star_fg=int(rng.integers(self.tau_star_fg[0], self.tau_star_fg[1] + 1)),
        )


def _rank(score: Optional[float]) -> float:
    return float("-inf") if score is None else score


def _evaluate(objective: Objective, candidates: Sequence[ThresholdSet], max_workers: Optional[int]) -> List[Optional[float]]:
    """按候选顺序返回得分；并行时结果顺序与顺序执行一致"""

    def call(params: ThresholdSet) -> Optional[float]:
        try:
            return objective(params)
        except ObjectiveError:
            raise
        except (RtsbsError, ValueError, ArithmeticError) as e:
            raise ObjectiveError(f"目标函数在 {params.as_tuple()} 处失败: {e}") from e

    if max_workers and max_workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(call, candidates))
    return [call(params) for params in candidates]


def _pick_best(trials: Sequence[Trial]) -> Trial:
    """严格大于才替换，得分相同时保留最先出现的试验"""
    best = trials[0]
    for trial in trials[1:]:
        if _rank(trial.score) > _rank(best.score):
            best = trial
    return best


def random_search(
    objective: Objective,
    space: SearchSpace,
    budget: int,
    seed: int,
    baseline: Optional[ThresholdSet] = None,
    max_workers: Optional[int] = None,
    trial_log: Optional[List[Trial]] = None,
) -> Trial:
    """
    随机搜索

    Args:
        objective: 阈值 -> 总体 F1（None 表示未定义）
        space: 搜索空间
        budget: 随机采样次数（基线之外）
        seed: 采样随机数种子
        baseline: 作为第 0 个试验的参数
        max_workers: 并行评估线程数
        trial_log: 不为空时追加全部试验

    Raises:
        ConfigError: budget < 1
        ObjectiveError: 目标函数失败
    """
    if budget < 1:
        raise ConfigError(f"budget 必须 >= 1，实际 {budget}")
    start = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(seed))
    candidates = [baseline] if baseline is not None else []
    candidates.extend(space.sample(rng) for _ in range(budget))

    scores = _evaluate(objective, candidates, max_workers)
    trials = [
        Trial(params=params, score=score, seed=seed, budget_id=i)
        for i, (params, score) in enumerate(zip(candidates, scores))
    ]
    if trial_log is not None:
        trial_log.extend(trials)

    best = _pick_best(trials)
    log_performance(logger, "random_search", (time.perf_counter() - start) * 1000, f"{len(trials)} 次试验")
    logger.info(f"随机搜索最优: {best.params.as_tuple()} F1={best.score}")
    return best


def coordinate_refine(
    objective: Objective,
    start: Trial,
    space: Optional[SearchSpace] = None,
    steps: int = 2,
    rounds: int = 1,
    deltas: Optional[Dict[str, float]] = None,
    max_workers: Optional[int] = None,
    trial_log: Optional[List[Trial]] = None,
) -> Trial:
    """
    坐标爬山：每轮依次在每个参数上试 start ± i * delta (i = 1..steps)，
    只接受严格更优的点；某一轮没有任何改进时提前结束
    """
    space = space or SearchSpace()
    deltas = {**DEFAULT_DELTAS, **(deltas or {})}
    best = start
    budget_id = start.budget_id
    for round_index in range(rounds):
        improved = False
        for axis in AXES:
            current = best.params.model_dump()
            candidates: List[ThresholdSet] = []
            for i in range(-steps, steps + 1):
                if i == 0:
                    continue
                point = space.clip({**current, axis: current[axis] + i * deltas[axis]})
                if point != best.params and point not in candidates:
                    candidates.append(point)
            if not candidates:
                continue
            scores = _evaluate(objective, candidates, max_workers)
            trials = []
            for params, score in zip(candidates, scores):
                budget_id += 1
                trials.append(Trial(params=params, score=score, seed=start.seed, budget_id=budget_id))
            if trial_log is not None:
                trial_log.extend(trials)
            challenger = _pick_best(trials)
            if _rank(challenger.score) > _rank(best.score):
                best = challenger
                improved = True
        logger.debug(f"第 {round_index + 1} 轮爬山结束: {best.params.as_tuple()} F1={best.score}")
        if not improved:
            break
    return best


def make_objective(
    sequences: Sequence[LoadedSequence],
    base_config: PipelineConfig,
    seeds: Optional[Sequence[int]] = None,
    max_workers: Optional[int] = None,
) -> Objective:
    """
    构建目标函数：把阈值写入 base_config，在给定视频上求总体 F1
    流水线种子固定（默认 base_config.seed），seeds 给出多个时取平均
    """
    seeds = list(seeds) if seeds else [base_config.seed]

    def objective(params: ThresholdSet) -> Optional[float]:
        config = params.apply(base_config)
        scores = []
        for seed in seeds:
            report, _ = evaluate_config(sequences, config.model_copy(update={"seed": seed}), max_workers)
            if report.overall is not None:
                scores.append(report.overall)
        return float(np.mean(scores)) if scores else None

    return objective


def optimize_global(
    sequences: Sequence[LoadedSequence],
    base_config: PipelineConfig,
    space: SearchSpace,
    budget: int,
    seed: int,
    refine_rounds: int = 1,
    max_workers: Optional[int] = None,
    trial_log: Optional[List[Trial]] = None,
) -> Trial:
    """全局优化：基线为 base_config 中的阈值"""
    objective = make_objective(sequences, base_config)
    baseline = ThresholdSet.from_config(base_config)
    best = random_search(objective, space, budget, seed, baseline, max_workers, trial_log)
    return coordinate_refine(objective, best, space, rounds=refine_rounds, max_workers=max_workers, trial_log=trial_log)


def scene_specific(
    sequences: Sequence[LoadedSequence],
    base_config: PipelineConfig,
    space: SearchSpace,
    budget: int,
    seed: int,
    global_best: Optional[ThresholdSet] = None,
    refine_rounds: int = 1,
    max_workers: Optional[int] = None,
) -> Dict[str, Trial]:
    """
    逐视频独立搜索，每个视频都以全局最优（缺省为 base_config 的阈值）作为第 0 个试验
    """
    baseline = global_best or ThresholdSet.from_config(base_config)
    results: Dict[str, Trial] = {}
    for sequence in sequences:
        objective = make_objective([sequence], base_config)
        best = random_search(objective, space, budget, seed, baseline, max_workers)
        results[sequence.name] = coordinate_refine(
            objective, best, space, rounds=refine_rounds, max_workers=max_workers
        )
        logger.info(f"[{sequence.name}] 场景最优: {results[sequence.name].params.as_tuple()} F1={results[sequence.name].score}")
    return results


def trials_table(trials: Sequence[Trial]) -> pd.DataFrame:
    rows = [
        {"trial": i, **trial.params.model_dump(), "f1": trial.score}
        for i, trial in enumerate(trials)
    ]
    return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def write_trial_log(trials: Sequence[Trial], path: Union[str, Path]) -> Path:
    return write_csv(trials_table(trials), path)


def per_x_tuner(
    sequences: Sequence[LoadedSequence],
    space: SearchSpace,
    budget: int,
    seed: int,
    refine_rounds: int = 1,
    max_workers: Optional[int] = None,
) -> Tuner:
    """
    sweep 的逐 X 调参回调：以传入配置（模式与 X 已设定）的阈值为基线做全局优化，
    返回写入最优阈值的配置
    """

    def tune(config: PipelineConfig) -> PipelineConfig:
        best = optimize_global(sequences, config, space, budget, seed, refine_rounds, max_workers)
        logger.info(f"mode={config.mode.value} X={config.schedule.x} 最优阈值 {best.params.as_tuple()} F1={best.score}")
        return best.params.apply(config)

    return tune
