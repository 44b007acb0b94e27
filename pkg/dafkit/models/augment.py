"""
增强策略与合成存储模型模块
"""
from enum import Enum
from typing import List, Optional

from pydantic import Field, model_validator

from .base import DafkitModel


class TransformKind(str, Enum):
    """变换类型枚举"""
    SDEDIT = "sdedit"
    SDEDIT_MASKED = "sdedit_masked"
    HFLIP = "hflip"
    VFLIP = "vflip"
    IDENTITY = "identity"


class MaskMode(str, Enum):
    """掩码增强模式：foreground 重绘物体，background 重绘背景"""
    NONE = "none"
    FOREGROUND = "foreground"
    BACKGROUND = "background"


class Granularity(str, Enum):
    """概念嵌入粒度：pooled 每类一个，specific 每张图一个"""
    POOLED = "pooled"
    SPECIFIC = "specific"


class RecordStatus(str, Enum):
    """存储记录状态"""
    PENDING = "pending"
    OK = "ok"
    FAILED = "failed"


class SlotOrigin(str, Enum):
    """批中样本来源"""
    REAL = "real"
    SYNTHETIC = "synthetic"


# ==================== 增强策略 ====================

class TransformDescriptor(DafkitModel):
    """变换描述 D_i"""
    kind: TransformKind
    t0: Optional[float] = Field(None, ge=0, le=1, description="SDEdit 插入位置")
    mask_mode: MaskMode = MaskMode.NONE

    @model_validator(mode="after")
    def check_fields(self):
        generative = self.kind in (TransformKind.SDEDIT, TransformKind.SDEDIT_MASKED)
        if generative and self.t0 is None:
            raise ValueError(f"{self.kind.value} 需要 t0")
        if self.kind == TransformKind.SDEDIT_MASKED and self.mask_mode == MaskMode.NONE:
            raise ValueError("sdedit_masked 需要 foreground 或 background 掩码模式")
        return self

    @property
    def is_generative(self) -> bool:
        return self.kind in (TransformKind.SDEDIT, TransformKind.SDEDIT_MASKED)

    def label(self) -> str:
        if self.kind == TransformKind.SDEDIT:
            return f"sdedit(t0={self.t0:g})"
        if self.kind == TransformKind.SDEDIT_MASKED:
            return f"sdedit_masked(t0={self.t0:g},{self.mask_mode.value})"
        return self.kind.value


class PolicyEntry(DafkitModel):
    """策略条目 (D_i, p_i)"""
    transform: TransformDescriptor
    probability: float = Field(..., ge=0, le=1)


class AugmentationPolicy(DafkitModel):
    """增强策略 𝒜：按概率选取一个变换"""
    entries: List[PolicyEntry] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_normalized(self):
        total = sum(e.probability for e in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"策略概率之和必须为 1，当前为 {total!r}")
        return self

    @property
    def probabilities(self) -> List[float]:
        return [e.probability for e in self.entries]

    @property
    def is_generative(self) -> bool:
        return any(e.transform.is_generative for e in self.entries)

    @property
    def needs_masks(self) -> bool:
        return any(e.transform.kind == TransformKind.SDEDIT_MASKED for e in self.entries)


# ==================== 合成存储记录 ====================

class StoreRecord(DafkitModel):
    """合成记录 X̃_ij 的来源信息"""
    i: int = Field(..., ge=0, description="真实图像索引")
    j: int = Field(..., ge=0, description="增强索引")
    class_id: int
    image_id: str
    entry_index: int = Field(..., ge=0, description="使用的策略条目")
    transform: str
    t0: Optional[float] = None
    seed: int
    concept_id: str
    status: RecordStatus = RecordStatus.PENDING
    error: Optional[str] = None
    path: Optional[str] = Field(None, description="相对存储根目录的 PNG 路径")


class StoreManifest(DafkitModel):
    """store/manifest.json 内容；是完整性的唯一依据"""
    n: int = Field(..., ge=0)
    m: int = Field(..., ge=1)
    policy: AugmentationPolicy
    records: List[StoreRecord] = Field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.records) == self.n * self.m and all(
            r.status == RecordStatus.OK for r in self.records
        )
