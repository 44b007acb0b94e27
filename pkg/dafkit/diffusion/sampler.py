"""
反向过程采样

单步反向（均值 + 可选噪声）、无分类器引导、完整生成、SDEdit 拼接与掩码混合修复。
所有函数同时接受单张图 (C, H, W) 与批 (B, C, H, W)；批中每个样本使用自己的随机数流。

随机数流标签：
    init      生成起点噪声
    splice    SDEdit 插入点的前向噪声
    step      每个反向步的噪声（t = 步序号）
    blend     掩码混合的 η（t = 混合所在时间步）
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import torch

from dafkit.core.exceptions import ParameterException, SamplingDivergenceException
from dafkit.core.rng import RngStream, as_streams, batch_randn
from dafkit.models import SamplerConfig

from .concepts import NULL_CONCEPT, ConceptTable
from .denoiser import NoisePredictor, predict_noise
from .schedule import (
    NoiseSchedule,
    _check_timestep,
    forward_sample,
    respace_schedule,
    splice_index,
)

ConceptIds = Union[str, Sequence[str]]
Streams = Union[RngStream, Sequence[RngStream]]


@dataclass(frozen=True)
class SamplingChain:
    """S 步采样链：等效调度 + 每步送入网络的原始时间步"""
    schedule: NoiseSchedule
    timesteps: Tuple[int, ...]

    @property
    def steps(self) -> int:
        return self.schedule.T

    def net_timestep(self, k: int) -> int:
        return self.timesteps[k - 1]


def sampling_chain(schedule: NoiseSchedule, steps: int) -> SamplingChain:
    """按 ⌊T/S⌋ 步长抽取时间步；S == T 时即原调度"""
    respaced = respace_schedule(schedule, steps)
    stride = schedule.T // steps
    return SamplingChain(respaced, tuple(k * stride for k in range(1, steps + 1)))


def reverse_step(
    x_t: torch.Tensor,
    t: int,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    x_{t-1} = (x_t − β_t/√(1−ᾱ_t) · ε̂) / √α_t [+ √β_t · noise]
    """
    if t == 0:
        raise ParameterException("t = 0 没有可反向的步")
    _check_timestep(t, schedule)
    if x_t.shape != eps_hat.shape:
        raise ParameterException(f"形状不一致: x_t={tuple(x_t.shape)}, eps_hat={tuple(eps_hat.shape)}")
    beta = schedule.beta(t)
    coef = beta / (1.0 - schedule.alpha_bar(t)) ** 0.5
    mean = (x_t - coef * eps_hat) / schedule.alpha(t) ** 0.5
    if noise is None:
        return mean
    return mean + beta ** 0.5 * noise


def _concept_list(concept_id: ConceptIds, batch: int) -> List[str]:
    if isinstance(concept_id, str):
        return [concept_id] * batch
    ids = list(concept_id)
    if len(ids) != batch:
        raise ParameterException(f"概念 id 数量 {len(ids)} 与批大小 {batch} 不一致")
    return ids


def guided_noise(
    net: NoisePredictor,
    table: ConceptTable,
    x_t: torch.Tensor,
    t: int,
    concept_id: ConceptIds,
    scale: float,
) -> torch.Tensor:
    """ε_u + s · (ε_c − ε_u)；s 为 0 或 1 时只计算需要的分支"""
    single = x_t.ndim == 3
    x = x_t.unsqueeze(0) if single else x_t
    ids = _concept_list(concept_id, x.shape[0])
    w_c = table.vectors(ids)
    w_u = table.vectors([NULL_CONCEPT] * len(ids))

    if scale == 0.0:
        out = predict_noise(net, x, t, w_u)
    elif scale == 1.0 or all(cid == NULL_CONCEPT for cid in ids):
        out = predict_noise(net, x, t, w_c)
    else:
        both = predict_noise(net, torch.cat([x, x]), t, torch.cat([w_c, w_u]))
        eps_c, eps_u = both.chunk(2)
        out = eps_u + scale * (eps_c - eps_u)
    return out.squeeze(0) if single else out


def _ensure_finite(x: torch.Tensor, timestep: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise SamplingDivergenceException(timestep)


def _step_noise(streams: Sequence[RngStream], k: int, shape, cfg: SamplerConfig) -> Optional[torch.Tensor]:
    if k == 1 and not cfg.final_noise:
        return None
    return batch_randn([s.child(tag="step", t=k) for s in streams], shape)


def _denoise(
    x: torch.Tensor,
    start: int,
    net: NoisePredictor,
    table: ConceptTable,
    chain: SamplingChain,
    cfg: SamplerConfig,
    ids: List[str],
    streams: Sequence[RngStream],
    x_ref: Optional[torch.Tensor] = None,
    preserve: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """从链上第 start 步反向到 0；给出 preserve 时每步之后做掩码混合"""
    shape = x.shape[1:]
    for k in range(start, 0, -1):
        eps_hat = guided_noise(net, table, x, chain.net_timestep(k), ids, cfg.guidance_scale)
        x = reverse_step(x, k, eps_hat, chain.schedule, _step_noise(streams, k, shape, cfg))
        if preserve is not None:
            eta = batch_randn([s.child(tag="blend", t=k - 1) for s in streams], shape)
            x = inpaint_blend(x, x_ref, preserve, k - 1, eta, chain.schedule)
        _ensure_finite(x, chain.net_timestep(k))
    return x


def _as_batch(x: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if x.ndim == 3:
        return x.unsqueeze(0).to(torch.float64), True
    if x.ndim == 4:
        return x.to(torch.float64), False
    raise ParameterException(f"图像张量必须是 (C, H, W) 或 (B, C, H, W): {tuple(x.shape)}")


@torch.no_grad()
def generate(
    net: NoisePredictor,
    table: ConceptTable,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    concept_id: ConceptIds,
    rng: Streams,
    shape: Tuple[int, int, int],
) -> torch.Tensor:
    """
    从纯噪声 x_S 反向生成

    concept_id 为字符串时返回单张图 (C, H, W)，为序列时返回批。
    """
    single = isinstance(concept_id, str)
    batch = 1 if single else len(concept_id)
    ids = _concept_list(concept_id, batch)
    streams = as_streams(rng, batch)
    chain = sampling_chain(schedule, cfg.steps)
    x = batch_randn([s.child(tag="init") for s in streams], shape)
    x = _denoise(x, chain.steps, net, table, chain, cfg, ids, streams)
    return x.squeeze(0) if single else x


@torch.no_grad()
def sdedit(
    x_ref: torch.Tensor,
    t0: float,
    net: NoisePredictor,
    table: ConceptTable,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    concept_id: ConceptIds,
    rng: Streams,
) -> torch.Tensor:
    """在 ⌊S·t0⌋ 处以加噪参考图替换起点后反向采样；t0 = 0 原样返回"""
    x, single = _as_batch(x_ref)
    start = splice_index(cfg.steps, t0)
    if start == 0:
        return x_ref.to(torch.float64).clone()
    ids = _concept_list(concept_id, x.shape[0])
    streams = as_streams(rng, x.shape[0])
    chain = sampling_chain(schedule, cfg.steps)
    eps = batch_randn([s.child(tag="splice") for s in streams], x.shape[1:])
    x_t = forward_sample(x, start, eps, chain.schedule)
    out = _denoise(x_t, start, net, table, chain, cfg, ids, streams)
    return out.squeeze(0) if single else out


def _check_mask(v: torch.Tensor) -> None:
    if not bool(torch.isfinite(v).all()) or float(v.min()) < 0.0 or float(v.max()) > 1.0:
        raise ParameterException("掩码取值必须在 [0, 1] 内")


def _mask_like(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """(H, W) / (1, H, W) / (B, 1, H, W) 掩码广播到图像形状"""
    v = v.to(like.dtype)
    if v.ndim == 2:
        v = v.unsqueeze(0)
    if like.ndim == 4 and v.ndim == 3:
        v = v.unsqueeze(0)
    return v


def inpaint_blend(
    x_t: torch.Tensor,
    x_ref: torch.Tensor,
    v: torch.Tensor,
    t: int,
    eta: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    v ⊙ (√ᾱ_t x_ref + √(1−ᾱ_t) η) + (1 − v) ⊙ x_t

    v = 1 的像素固定到参考图的加噪轨迹（保留），v = 0 的像素自由生成。t = 0 时 ᾱ₀ = 1，直接粘贴参考图。
    """
    _check_mask(v)
    _check_timestep(t, schedule, lowest=0)
    if x_t.shape != x_ref.shape:
        raise ParameterException(f"形状不一致: x_t={tuple(x_t.shape)}, x_ref={tuple(x_ref.shape)}")
    mask = _mask_like(v, x_t)
    abar = schedule.alpha_bar(t)
    pinned = abar ** 0.5 * x_ref + (1.0 - abar) ** 0.5 * eta
    return mask * pinned + (1.0 - mask) * x_t


@torch.no_grad()
def sdedit_masked(
    x_ref: torch.Tensor,
    v: torch.Tensor,
    t0: float,
    net: NoisePredictor,
    table: ConceptTable,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    concept_id: ConceptIds,
    rng: Streams,
) -> torch.Tensor:
    """
    SDEdit + 每个反向步后的掩码混合（每步重新抽取 η）

    v 为保留掩码；最后一次混合发生在 t = 0，v = 1 的像素与参考图逐位相同。
    """
    _check_mask(v)
    x, single = _as_batch(x_ref)
    start = splice_index(cfg.steps, t0)
    if start == 0:
        return x_ref.to(torch.float64).clone()
    ids = _concept_list(concept_id, x.shape[0])
    streams = as_streams(rng, x.shape[0])
    chain = sampling_chain(schedule, cfg.steps)
    eps = batch_randn([s.child(tag="splice") for s in streams], x.shape[1:])
    x_t = forward_sample(x, start, eps, chain.schedule)
    out = _denoise(x_t, start, net, table, chain, cfg, ids, streams, x_ref=x, preserve=v)
    return out.squeeze(0) if single else out

