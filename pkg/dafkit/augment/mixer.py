"""
真实/合成混合批

每个批位置以概率 α 取合成图像（在全部 N × M 个 (i, j) 上均匀），否则取真实图像（在 N 上均匀）。
合成存储必须完整。
"""
from typing import List, Optional, Sequence, Tuple

import torch

from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.models import MixerConfig, SlotOrigin

from .records import DatasetRecord
from .store import SyntheticStore

BatchItem = Tuple[torch.Tensor, int, SlotOrigin]


def balanced_batch(
    real: Sequence[DatasetRecord],
    store: Optional[SyntheticStore],
    mix: MixerConfig,
    rng: RngStream,
) -> List[BatchItem]:
    """返回 mix.batch_size 个 (图像, 类别, 来源)；合成图像的类别取其来源图像的类别"""
    if not real:
        raise ParameterException("真实数据集不能为空")
    if store is not None and not store.is_complete:
        raise ParameterException(
            f"合成存储不完整: {len(store)}/{store.n * store.m} 条记录, {len(store.failed_records())} 条失败"
        )
    keys = store.available_keys() if store is not None else []
    if mix.alpha > 0 and not keys:
        raise ParameterException("α > 0 时需要非空的合成存储")

    gen = rng.generator()
    size = mix.batch_size
    u = torch.rand(size, generator=gen, dtype=torch.float64)
    real_idx = torch.randint(len(real), (size,), generator=gen).tolist()
    syn_idx = torch.randint(len(keys), (size,), generator=gen).tolist() if keys else [0] * size

    batch: List[BatchItem] = []
    for slot in range(size):
        if float(u[slot]) < mix.alpha:
            i, j = keys[syn_idx[slot]]
            batch.append((store.image(i, j), store.record(i, j).class_id, SlotOrigin.SYNTHETIC))
        else:
            record = real[real_idx[slot]]
            batch.append((record.image, record.label, SlotOrigin.REAL))
    return batch
