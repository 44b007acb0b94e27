"""
噪声调度与前向过程

纯函数数值内核：所有调度与采样计算使用 float64。
时间步从 1 开始编号 (t ∈ 1..T)，约定 ᾱ₀ = 1，t = 0 表示干净图像。
图像为通道在前的 torch 张量 (C, H, W) 或批 (B, C, H, W)。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import torch

from dafkit.core.exceptions import ParameterException

Timestep = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """
    β/α/ᾱ 序列

    betas[t-1] = β_t，alphas[t-1] = α_t，alpha_bars[t] = ᾱ_t（alpha_bars[0] = 1）
    """
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])

    @classmethod
    def from_betas(cls, betas: torch.Tensor) -> "NoiseSchedule":
        """由 β 序列推导 α 与 ᾱ"""
        betas = betas.to(torch.float64)
        if betas.ndim != 1 or betas.numel() < 1:
            raise ParameterException("betas 必须是非空一维序列")
        if not bool(((betas > 0) & (betas < 1)).all()):
            raise ParameterException("所有 β_t 必须在 (0, 1) 内")
        alphas = 1.0 - betas
        alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(alphas, dim=0)])
        return cls(betas=betas, alphas=alphas, alpha_bars=alpha_bars)

    def to_params(self) -> dict:
        """检查点中保存的调度参数"""
        return {"T": self.T, "betas": self.betas.tolist()}


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """β 从 beta_start 线性插值到 beta_end（含两端）"""
    if not isinstance(T, int) or T < 1:
        raise ParameterException(f"T 必须为正整数: {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterException(
            f"需要 0 < beta_start <= beta_end < 1: beta_start={beta_start}, beta_end={beta_end}"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    return NoiseSchedule.from_betas(betas)


def respace_schedule(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """
    按步长 ⌊T/S⌋ 抽取 S 个时间步，保留访问点上的 ᾱ，
    并由相邻 ᾱ 之比推出等效 β，使反向步、拼接与混合公式在 S 步链上不变。
    """
    T = schedule.T
    if steps < 1 or steps > T:
        raise ParameterException(f"采样步数 S 必须在 1..{T} 内: {steps}")
    if steps == T:
        return schedule
    stride = T // steps
    visited = torch.arange(1, steps + 1) * stride
    kept = schedule.alpha_bars[visited]
    previous = torch.cat([torch.ones(1, dtype=torch.float64), kept[:-1]])
    betas = 1.0 - kept / previous
    alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), kept])
    return NoiseSchedule(betas=betas, alphas=1.0 - betas, alpha_bars=alpha_bars)


def _check_timestep(t: Timestep, schedule: NoiseSchedule, lowest: int = 1) -> None:
    if isinstance(t, torch.Tensor):
        if t.numel() == 0 or int(t.min()) < lowest or int(t.max()) > schedule.T:
            raise ParameterException(f"时间步超出范围 {lowest}..{schedule.T}")
    elif not lowest <= t <= schedule.T:
        raise ParameterException(f"时间步超出范围 {lowest}..{schedule.T}: {t}")


def _broadcast(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """把逐样本系数 (B,) 变形为可与 (B, C, H, W) 广播的形状"""
    return values.reshape(-1, *([1] * (like.ndim - 1))).to(like.dtype)


def forward_sample(
    x0: torch.Tensor,
    t: Timestep,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    闭式前向加噪: √ᾱ_t · x0 + √(1 − ᾱ_t) · eps

    t 可以是整数，也可以是长度为批大小的整数张量（逐样本时间步）。
    """
    if x0.shape != eps.shape:
        raise ParameterException(f"形状不一致: x0={tuple(x0.shape)}, eps={tuple(eps.shape)}")
    _check_timestep(t, schedule)
    if isinstance(t, torch.Tensor):
        abar = schedule.alpha_bars[t.long()]
        return _broadcast(abar.sqrt(), x0) * x0 + _broadcast((1.0 - abar).sqrt(), x0) * eps
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def splice_index(S: int, t0: float) -> int:
    """SDEdit 插入位置 ⌊S · t0⌋"""
    if S < 1:
        raise ParameterException(f"S 必须为正整数: {S}")
    if not 0.0 <= t0 <= 1.0:
        raise ParameterException(f"t0 必须在 [0, 1] 内: {t0}")
    return math.floor(S * t0)


def from_pixels(pixels: torch.Tensor) -> torch.Tensor:
    """8 位像素 p 映射为 2·(p/255) − 1"""
    return pixels.to(torch.float64) / 255.0 * 2.0 - 1.0


def to_pixels(image: torch.Tensor) -> torch.Tensor:
    """逆映射：先截断到 [−1, 1]，再四舍五入（远离零）量化为 uint8"""
    scaled = (image.to(torch.float64).clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0
    return torch.floor(scaled + 0.5).clamp(0, 255).to(torch.uint8)
