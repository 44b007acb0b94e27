"""
数据集记录
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch


@dataclass
class DatasetRecord:
    """
    一张带标签的真实图像

    image 为 (C, H, W) float64，取值 [-1, 1]；masks 为 (类别, (H, W) 二值掩码) 列表
    """
    index: int
    image: torch.Tensor
    label: int
    image_id: str
    masks: List[Tuple[int, torch.Tensor]] = field(default_factory=list)
    source: Optional[str] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.image.shape)

    @property
    def has_masks(self) -> bool:
        return bool(self.masks)
