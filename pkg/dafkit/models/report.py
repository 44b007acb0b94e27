"""
小样本实验报告模型模块
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import Field, field_validator, model_validator

from .augment import Granularity, MaskMode
from .base import DafkitModel


class MethodKind(str, Enum):
    """实验方法"""
    BASELINE = "baseline"
    REAL_GUIDANCE = "real-guidance"
    DAFUSION = "dafusion"
    DAFUSION_MASKED = "dafusion-masked"


class CellStatus(str, Enum):
    """实验单元状态"""
    OK = "ok"
    FAILED = "failed"


class MethodSpec(DafkitModel):
    """
    方法描述

    字符串形式: "kind" 或 "kind:key=value,key=value"，例如
    "dafusion:k=4"、"dafusion:k=1,t0=0.5"、"dafusion-masked:mode=foreground"、"real-guidance:alpha=0.3"
    """
    kind: MethodKind
    k: Optional[int] = Field(None, ge=1, description="堆叠数；为空时 dafusion 取 4，dafusion-masked 取 1")
    t0: Optional[float] = Field(None, ge=0, le=1)
    alpha: Optional[float] = Field(None, ge=0, le=1)
    mask_mode: MaskMode = MaskMode.NONE
    granularity: Optional[Granularity] = None
    identity: bool = Field(False, description="恒等策略（退化检查）")
    name: str = ""

    @model_validator(mode="before")
    @classmethod
    def default_name(cls, data):
        if isinstance(data, dict) and not data.get("name") and data.get("kind") is not None:
            kind = data["kind"]
            data = {**data, "name": kind.value if isinstance(kind, MethodKind) else str(kind)}
        return data

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        text = text.strip()
        kind, _, rest = text.partition(":")
        options: Dict[str, str] = {}
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, sep, value = part.partition("=")
            if not sep:
                raise ValueError(f"方法参数格式错误: {part}")
            options[key.strip()] = value.strip()
        fields: Dict[str, object] = {"kind": MethodKind(kind.strip()), "name": text}
        for key, value in options.items():
            if key == "k":
                fields["k"] = int(value)
            elif key in ("t0", "alpha"):
                fields[key] = float(value)
            elif key == "mode":
                fields["mask_mode"] = MaskMode(value)
            elif key == "granularity":
                fields["granularity"] = Granularity(value)
            elif key == "identity":
                fields["identity"] = value.lower() in ("1", "true", "yes")
            else:
                raise ValueError(f"未知方法参数: {key}")
        spec = cls(**fields)
        if spec.kind == MethodKind.DAFUSION_MASKED and spec.mask_mode == MaskMode.NONE:
            raise ValueError("dafusion-masked 需要 mode=foreground|background")
        return spec

    @property
    def is_generative(self) -> bool:
        return self.kind != MethodKind.BASELINE and not self.identity

    @property
    def effective_k(self) -> int:
        if self.k is not None:
            return self.k
        return 1 if self.kind == MethodKind.DAFUSION_MASKED else 4

    @property
    def uses_concepts(self) -> bool:
        return self.kind in (MethodKind.DAFUSION, MethodKind.DAFUSION_MASKED) and not self.identity


class CellResult(DafkitModel):
    """单个 (方法, q, 试验) 单元的结果"""
    dataset: str
    method: str
    q: int
    trial: int
    accuracy: Optional[float] = Field(None, ge=0, le=1)
    steps_to_best: Optional[int] = None
    status: CellStatus = CellStatus.OK
    error: Optional[str] = None
    synthetic_records: int = 0
    train_indices: List[int] = Field(default_factory=list)
    validation_size: int = 0
    integrity_ok: bool = True


class CurvePoint(DafkitModel):
    """准确率-样本数曲线上的一点"""
    q: int
    mean: float
    ci_low: float
    ci_high: float
    trials: int


class MethodSummary(DafkitModel):
    """方法汇总"""
    dataset: str
    method: str
    curve: List[CurvePoint] = Field(default_factory=list)
    auc: Optional[float] = None
    auc_ci_low: Optional[float] = None
    auc_ci_high: Optional[float] = None
    normalized_score: Optional[float] = None
    gain_vs_reference: List[CurvePoint] = Field(default_factory=list)
    auc_gain_vs_reference: Optional[float] = None


class ExperimentReport(DafkitModel):
    """实验报告"""
    seed: int
    datasets: List[str]
    methods: List[str]
    q_grid: List[int]
    trials: int
    reference_method: Optional[str] = None
    cells: List[CellResult] = Field(default_factory=list)
    summaries: List[MethodSummary] = Field(default_factory=list)
    overall_scores: Dict[str, float] = Field(default_factory=dict)
    degeneracy_ok: Optional[bool] = None
    integrity_ok: bool = True

    @field_validator("q_grid")
    @classmethod
    def check_q_grid(cls, v: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("q_grid 必须严格递增")
        return v

    @property
    def failed_cells(self) -> List[CellResult]:
        return [c for c in self.cells if c.status == CellStatus.FAILED]

    @property
    def complete(self) -> bool:
        expected = len(self.datasets) * len(self.methods) * len(self.q_grid) * self.trials
        return len(self.cells) == expected and not self.failed_cells
