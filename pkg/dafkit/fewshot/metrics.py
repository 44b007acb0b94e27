"""
实验指标

AUC 在 log2(q) 轴上做梯形积分并除以轴长度，得到与准确率同尺度的平均高度；
置信区间为均值 ± 一个均值标准误（68% 正态近似）。
"""
from typing import List, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from dafkit.core.exceptions import ParameterException


def auc_over_q(curve: Sequence[Tuple[float, float]]) -> float:
    """(q, 平均准确率) 曲线下面积"""
    if len(curve) < 2:
        raise ParameterException("AUC 至少需要 2 个点")
    q = np.asarray([p[0] for p in curve], dtype=np.float64)
    y = np.asarray([p[1] for p in curve], dtype=np.float64)
    if np.any(q <= 0) or np.any(np.diff(q) <= 0):
        raise ParameterException("q 必须为正且严格递增")
    x = np.log2(q)
    return float(integrate.trapezoid(y, x) / (x[-1] - x[0]))


def normalize_scores(values: Sequence[float], y_min: float, y_max: float) -> List[float]:
    """(y − y_min) / (y_max − y_min)"""
    if not y_max > y_min:
        raise ParameterException(f"归一化区间退化: y_min={y_min}, y_max={y_max}")
    arr = np.asarray(values, dtype=np.float64)
    return ((arr - y_min) / (y_max - y_min)).tolist()


def confidence_interval_68(samples: Sequence[float]) -> Tuple[float, float, float]:
    """(均值, 下界, 上界)"""
    if len(samples) < 2:
        raise ParameterException("置信区间至少需要 2 个样本")
    arr = np.asarray(samples, dtype=np.float64)
    if np.all(arr == arr[0]):
        v = float(arr[0])
        return v, v, v
    mean = float(np.mean(arr))
    half = float(stats.sem(arr))
    return mean, mean - half, mean + half


def intervals_overlap(a: Tuple[float, float, float], b: Tuple[float, float, float]) -> bool:
    """两个 (均值, 下界, 上界) 区间是否重叠"""
    return a[1] <= b[2] and b[1] <= a[2]
