"""
变化检测模块
比较当前像素颜色与 t* 时刻缓存颜色的 RGB L1 距离，按缓存语义决策选择阈值：
距离 <= tau 判为未变化（可以沿用缓存的语义决策），否则判为变化。
"""
from typing import Optional, Sequence

import numpy as np

from app.models.schemas import ChangeParams, ChangeVerdict, Frame, SemanticDecision
from app.services.semantic import CacheEntry, PixelSemanticCache
from app.utils.errors import check_same_shape


def l1_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """两个 RGB 三元组的 L1 (Manhattan) 距离"""
    return int(sum(abs(int(x) - int(y)) for x, y in zip(a, b)))


def detect(
    current: Sequence[int],
    cache_entry: CacheEntry,
    params: ChangeParams,
    t: Optional[int] = None,
) -> ChangeVerdict:
    """
    单像素变化判定

    缓存为空或缓存决策为 "?" -> DONT_CARE；
    t 与 t* 相同（本帧刚刷新的像素）-> NO_CHANGE；
    否则 BG 用 tau_star_bg，FG 用 tau_star_fg，距离 <= tau 为 NO_CHANGE。
    """
    if cache_entry.empty or cache_entry.decision == SemanticDecision.DONT_KNOW:
        return ChangeVerdict.DONT_CARE
    if t is not None and cache_entry.t_star == t:
        return ChangeVerdict.NO_CHANGE
    tau = params.tau_star_bg if cache_entry.decision == SemanticDecision.BG else params.tau_star_fg
    if l1_distance(current, cache_entry.color) <= tau:
        return ChangeVerdict.NO_CHANGE
    return ChangeVerdict.CHANGE


def detect_map(frame: Frame, cache: PixelSemanticCache, params: ChangeParams, t: int) -> np.ndarray:
    """detect 的整图版本，返回 ChangeVerdict 编码的 uint8 数组"""
    check_same_shape(cache.shape, frame.shape, "变化检测帧")
    distance = np.abs(frame.data.astype(np.int32) - cache.color.astype(np.int32)).sum(axis=-1)
    tau = np.where(cache.decision == SemanticDecision.BG, params.tau_star_bg, params.tau_star_fg)

    verdict = np.where(distance <= tau, ChangeVerdict.NO_CHANGE, ChangeVerdict.CHANGE).astype(np.uint8)
    verdict[cache.t_star == t] = ChangeVerdict.NO_CHANGE
    verdict[cache.empty | (cache.decision == SemanticDecision.DONT_KNOW)] = ChangeVerdict.DONT_CARE
    return verdict
