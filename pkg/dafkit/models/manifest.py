"""
运行清单模型模块
"""
from datetime import datetime, timezone
from typing import Any, Dict, List

from pydantic import Field

from .base import DafkitModel


class ArtifactEntry(DafkitModel):
    """产物文件及其 git 风格内容哈希"""
    path: str
    sha1: str
    size: int


class RunManifest(DafkitModel):
    """每条命令写出的运行清单"""
    command: str
    config_hash: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[ArtifactEntry] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict, description="各阶段耗时（秒）")
    extra: Dict[str, Any] = Field(default_factory=dict, description="命令相关的附加信息")
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
