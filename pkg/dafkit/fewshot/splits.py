"""
小样本划分

每类先按数据集种子固定切出 20% 验证池，其余为训练池；
再按划分种子从训练池无放回抽取 q 张。验证池与划分种子无关。
"""
from typing import Dict, List, Optional, Sequence

import torch

from dafkit.augment import DatasetRecord
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.models import FewShotSplit


def _by_class(dataset: Sequence[DatasetRecord]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = {}
    for position, record in enumerate(dataset):
        groups.setdefault(record.label, []).append(position)
    return groups


def make_split(
    dataset: Sequence[DatasetRecord],
    q: Optional[int],
    seed: int,
    *,
    validation_fraction: float = 0.2,
    pool_seed: int = 0,
) -> FewShotSplit:
    """
    构建 q-shot 划分

    索引为 dataset 中的位置。q 为空时训练集为完整训练池。
    """
    if q is not None and q < 1:
        raise ParameterException(f"q 必须 >= 1: {q}")
    if not 0.0 < validation_fraction < 1.0:
        raise ParameterException(f"validation_fraction 必须在 (0, 1) 内: {validation_fraction}")

    train: List[int] = []
    validation: List[int] = []
    pool: List[int] = []
    for class_id, positions in sorted(_by_class(dataset).items()):
        if len(positions) < 2:
            raise ParameterException(f"类别 {class_id} 样本不足以划分验证集", data={"class_id": class_id})
        order = torch.randperm(len(positions), generator=RngStream(pool_seed, "pool", i=class_id).generator())
        n_val = max(1, round(validation_fraction * len(positions)))
        val = sorted(positions[k] for k in order[:n_val].tolist())
        candidates = sorted(positions[k] for k in order[n_val:].tolist())
        if q is None:
            chosen = candidates
        else:
            if q > len(candidates):
                raise ParameterException(
                    f"类别 {class_id} 只有 {len(candidates)} 个训练候选，少于 q={q}",
                    data={"class_id": class_id},
                )
            picks = torch.randperm(len(candidates), generator=RngStream(seed, "split", i=class_id).generator())
            chosen = sorted(candidates[k] for k in picks[:q].tolist())
        train.extend(chosen)
        validation.extend(val)
        pool.extend(candidates)

    return FewShotSplit(q=q, train_indices=train, validation_indices=validation, pool_indices=pool)
