"""
Schema 模块

使用 pydantic 统一配置、来源记录与报告结构
"""
from .base import DafkitModel, StrictSection
from .config import (
    ConfigDoc, Table1Section, ScheduleSection, ModelSection, TrainSection, SamplerSection,
    DatasetSection, PretrainSection, FewshotSection, RunSection,
    TrainConfig, SamplerConfig, MixerConfig, ProbeConfig,
)
from .augment import (
    TransformKind, MaskMode, Granularity, RecordStatus, SlotOrigin,
    TransformDescriptor, PolicyEntry, AugmentationPolicy, StoreRecord, StoreManifest,
)
from .dataset import ShapeFamily, ToyClassSpec, ToyDatasetSpec, FewShotSplit
from .report import MethodKind, MethodSpec, CellStatus, CellResult, CurvePoint, MethodSummary, ExperimentReport
from .manifest import ArtifactEntry, RunManifest

__all__ = [
    # Base
    "DafkitModel",
    "StrictSection",
    # Config
    "ConfigDoc",
    "Table1Section",
    "ScheduleSection",
    "ModelSection",
    "TrainSection",
    "SamplerSection",
    "DatasetSection",
    "PretrainSection",
    "FewshotSection",
    "RunSection",
    "TrainConfig",
    "SamplerConfig",
    "MixerConfig",
    "ProbeConfig",
    # Augment
    "TransformKind",
    "MaskMode",
    "Granularity",
    "RecordStatus",
    "SlotOrigin",
    "TransformDescriptor",
    "PolicyEntry",
    "AugmentationPolicy",
    "StoreRecord",
    "StoreManifest",
    # Dataset
    "ShapeFamily",
    "ToyClassSpec",
    "ToyDatasetSpec",
    "FewShotSplit",
    # Report
    "MethodKind",
    "MethodSpec",
    "CellStatus",
    "CellResult",
    "CurvePoint",
    "MethodSummary",
    "ExperimentReport",
    # Manifest
    "ArtifactEntry",
    "RunManifest",
]
