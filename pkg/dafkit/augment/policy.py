"""
增强策略构建与抽样

t0_i = i / k，p_i = 1 / k；每次增强从策略中按概率抽取一个条目。
条目索引从 0 开始。
"""
from typing import Optional, Sequence

import torch

from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.models import (
    AugmentationPolicy,
    MaskMode,
    PolicyEntry,
    TransformDescriptor,
    TransformKind,
)


def build_dafusion_policy(
    k: int,
    base: TransformKind = TransformKind.SDEDIT,
    *,
    mask_mode: MaskMode = MaskMode.NONE,
    t0: Optional[float] = None,
    probabilities: Optional[Sequence[float]] = None,
    extra: Sequence[TransformKind] = (),
) -> AugmentationPolicy:
    """
    构建 k 个 SDEdit 条目的堆叠策略

    Args:
        k: 堆叠数
        base: sdedit 或 sdedit_masked
        mask_mode: base 为 sdedit_masked 时的掩码模式
        t0: 覆盖所有条目的 t0（k=1 消融使用 0.5）
        probabilities: 各条目激活概率，默认 1/k
        extra: 额外并入策略的非生成变换（如水平翻转）；给出时所有条目等概率
    """
    if k < 1:
        raise ParameterException(f"k 必须 >= 1: {k}")
    if base not in (TransformKind.SDEDIT, TransformKind.SDEDIT_MASKED):
        raise ParameterException(f"基础变换必须是生成式: {base.value}")
    total = k + len(extra)
    if probabilities is None:
        probabilities = [1.0 / total] * total
    elif extra:
        raise ParameterException("extra 与自定义 probabilities 不能同时给出")
    if len(probabilities) != total:
        raise ParameterException(f"probabilities 长度 {len(probabilities)} 与条目数 {total} 不一致")

    try:
        transforms = [
            TransformDescriptor(kind=base, t0=t0 if t0 is not None else i / k, mask_mode=mask_mode)
            for i in range(1, k + 1)
        ]
        transforms += [TransformDescriptor(kind=kind) for kind in extra]
        return AugmentationPolicy(
            entries=[PolicyEntry(transform=d, probability=p) for d, p in zip(transforms, probabilities)]
        )
    except ValueError as e:
        raise ParameterException(str(e)) from e


def identity_policy() -> AugmentationPolicy:
    """恒等策略：合成图像与原图相同"""
    return AugmentationPolicy(
        entries=[PolicyEntry(transform=TransformDescriptor(kind=TransformKind.IDENTITY), probability=1.0)]
    )


def real_guidance_policy(t0: float = 0.5) -> AugmentationPolicy:
    """Real Guidance 对照：固定 t0 的单条目 SDEdit"""
    return build_dafusion_policy(1, t0=t0)


def choose_augmentation(policy: AugmentationPolicy, rng: RngStream) -> int:
    """按激活概率抽取条目索引"""
    probs = torch.tensor(policy.probabilities, dtype=torch.float64)
    return int(torch.multinomial(probs, 1, generator=rng.generator()))
