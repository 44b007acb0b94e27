"""
程序化玩具数据集模型模块
"""
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import Field, model_validator

from .base import DafkitModel


class ShapeFamily(str, Enum):
    """形状族；前四种为评估词表，后四种仅用于预训练"""
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    CROSS = "cross"
    RING = "ring"
    DIAMOND = "diamond"
    HBAR = "hbar"
    VBAR = "vbar"


RGB = Tuple[float, float, float]


class ToyClassSpec(DafkitModel):
    """单个类别的生成参数（颜色取值范围 [-1, 1]）"""
    name: str
    family: ShapeFamily
    color: Optional[RGB] = Field(None, description="颜色均值；为空表示每张图随机取色")
    color_std: float = Field(0.1, ge=0)
    texture_noise: float = Field(0.05, ge=0, description="纹理噪声标准差")
    texture_scale: int = Field(1, ge=1, description="纹理噪声块大小（像素）")


class ToyDatasetSpec(DafkitModel):
    """程序化数据集规格"""
    classes: List[ToyClassSpec] = Field(..., min_length=2)
    images_per_class: int = Field(100, ge=1)
    resolution: int = Field(32, ge=4)
    backgrounds: List[RGB] = Field(default_factory=lambda: [(-0.6, -0.6, -0.6)])
    background_noise: float = Field(0.05, ge=0)
    scale_range: Tuple[float, float] = Field((0.22, 0.36))
    distractor_prob: float = Field(0.0, ge=0, le=1, description="加入较小干扰物体的概率")
    emit_masks: bool = True
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_scale(self):
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 0.4:
            raise ValueError("scale_range 必须满足 0 < lo <= hi <= 0.4")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.classes)


class FewShotSplit(DafkitModel):
    """小样本划分：每类 q 张训练图 + 固定验证池"""
    q: Optional[int] = Field(None, ge=1, description="每类训练样本数；为空表示使用全部训练池")
    train_indices: List[int]
    validation_indices: List[int]
    pool_indices: List[int] = Field(default_factory=list, description="可供抽取的训练池")

    @model_validator(mode="after")
    def check_disjoint(self):
        if set(self.train_indices) & set(self.validation_indices):
            raise ValueError("训练集与验证集必须不相交")
        return self
