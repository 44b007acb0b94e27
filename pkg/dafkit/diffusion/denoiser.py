"""
噪声预测网络 ε_θ

小型像素空间编码器-解码器：时间步正弦嵌入经 MLP 投影到条件维度 d，
与概念嵌入 w 相加后，在每个残差块（含瓶颈）中投影并以加性偏置注入。
GroupNorm 保证批内样本互不影响。
"""
from __future__ import annotations

import math
from typing import List, Protocol, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from dafkit.core.exceptions import ParameterException


class NoisePredictor(Protocol):
    """ε_θ 的调用约定：(x_t, t, w) -> 预测噪声"""
    cond_dim: int

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor: ...


def _groups(groups: int, channels: int) -> int:
    return math.gcd(groups, channels)


class SinusoidalTimeEmbedding(nn.Module):
    """时间步的正弦特征"""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / max(half - 1, 1)
        )
        args = t.to(torch.float64)[:, None] * freqs[None, :]
        emb = torch.cat([args.sin(), args.cos()], dim=-1)
        if self.dim % 2:
            emb = F.pad(emb, (0, 1))
        return emb


class ResBlock(nn.Module):
    """带条件偏置的残差块"""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.cond_proj = nn.Linear(cond_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(groups, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond_proj(cond)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class EpsilonNet(nn.Module):
    """
    ε_θ 编码器-解码器

    Args:
        in_channels: 图像通道数（1 或 3）
        channels: 各分辨率层的通道宽度，默认 32/64/64
        cond_dim: 条件维度 d（概念嵌入长度）
        time_dim: 时间步正弦特征维度
        groups: GroupNorm 分组上限
    """

    def __init__(
        self,
        in_channels: int = 3,
        channels: Sequence[int] = (32, 64, 64),
        cond_dim: int = 16,
        time_dim: int = 64,
        groups: int = 8,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.channels = list(channels)
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.groups = groups

        self.time_embed = SinusoidalTimeEmbedding(time_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, 4 * cond_dim),
            nn.SiLU(),
            nn.Linear(4 * cond_dim, cond_dim),
        )
        self.conv_in = nn.Conv2d(in_channels, self.channels[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = self.channels[0]
        for level, ch in enumerate(self.channels):
            self.down_blocks.append(ResBlock(prev, ch, cond_dim, groups))
            prev = ch
            if level < len(self.channels) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid_block = ResBlock(prev, prev, cond_dim, groups)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for level in reversed(range(len(self.channels))):
            ch = self.channels[level]
            self.up_blocks.append(ResBlock(prev + ch, ch, cond_dim, groups))
            prev = ch
            if level > 0:
                self.upsamples.append(nn.Conv2d(ch, self.channels[level - 1], 3, padding=1))
                prev = self.channels[level - 1]

        self.norm_out = nn.GroupNorm(_groups(groups, self.channels[0]), self.channels[0])
        self.conv_out = nn.Conv2d(self.channels[0], in_channels, 3, padding=1)

    @property
    def min_resolution_multiple(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def hparams(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "channels": self.channels,
            "cond_dim": self.cond_dim,
            "time_dim": self.time_dim,
            "groups": self.groups,
        }

    def forward(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.min_resolution_multiple or x.shape[-2] % self.min_resolution_multiple:
            raise ParameterException(f"分辨率必须是 {self.min_resolution_multiple} 的倍数: {tuple(x.shape)}")
        cond = self.time_mlp(self.time_embed(t).to(x.dtype)) + w

        h = self.conv_in(x)
        skips: List[torch.Tensor] = []
        for level, block in enumerate(self.down_blocks):
            h = block(h, cond)
            skips.append(h)
            if level < len(self.downsamples):
                h = self.downsamples[level](h)

        h = self.mid_block(h, cond)

        for index, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), cond)
            if index < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[index](h)

        return self.conv_out(F.silu(self.norm_out(h)))


def net_dtype(net: object, fallback: torch.dtype = torch.float32) -> torch.dtype:
    """网络参数的浮点类型；无参数的桩网络返回 fallback"""
    if isinstance(net, nn.Module):
        for p in net.parameters():
            return p.dtype
    return fallback


def predict_noise(
    net: NoisePredictor,
    x_t: torch.Tensor,
    t: Union[int, torch.Tensor],
    w: torch.Tensor,
) -> torch.Tensor:
    """
    计算 ε_θ(x_t, t, w)

    x_t 可为 (C, H, W) 或 (B, C, H, W)；w 为 (d,) 或 (B, d)。
    输入转换为网络精度，输出转换回 x_t 的精度。
    """
    cond_dim = getattr(net, "cond_dim", w.shape[-1])
    if w.shape[-1] != cond_dim:
        raise ParameterException(f"嵌入长度 {w.shape[-1]} 与条件维度 {cond_dim} 不一致")
    single = x_t.ndim == 3
    x = x_t.unsqueeze(0) if single else x_t
    batch = x.shape[0]
    if w.ndim == 1:
        w = w.unsqueeze(0).expand(batch, -1)
    if isinstance(t, torch.Tensor):
        tt = t.reshape(-1).long()
        if tt.numel() == 1 and batch > 1:
            tt = tt.expand(batch)
    else:
        tt = torch.full((batch,), int(t), dtype=torch.long)
    dtype = net_dtype(net, fallback=x.dtype)
    out = net(x.to(dtype), tt, w.to(dtype))
    out = out.to(x_t.dtype)
    return out.squeeze(0) if single else out
