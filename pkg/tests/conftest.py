"""
测试配置文件

提供测试用的 fixtures：噪声调度、桩网络、小型真实网络、数据记录与小规模配置等
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import pytest
import torch

from dafkit.augment import DatasetRecord
from dafkit.core.rng import RngStream, torch_seed
from dafkit.diffusion import (
    ConceptTable,
    EpsilonNet,
    NoiseSchedule,
    class_concept_id,
    from_pixels,
    make_linear_schedule,
    to_pixels,
)
from dafkit.models import ConfigDoc
from dafkit.storage import save_config


# ========== 桩网络 ==========

class ZeroNet:
    """恒为零的噪声预测"""

    def __init__(self, cond_dim: int = 4):
        self.cond_dim = cond_dim
        self.calls: List[int] = []

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        self.calls.append(x.shape[0])
        return torch.zeros_like(x)


class EmbeddingNet:
    """输出只依赖嵌入：每个样本为常数 sum(w)，可对嵌入求导"""

    def __init__(self, cond_dim: int = 4, gain: float = 0.1):
        self.cond_dim = cond_dim
        self.gain = gain
        self.calls: List[int] = []

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        self.calls.append(x.shape[0])
        return x * 0.0 + self.gain * w.sum(dim=-1).to(x.dtype)[:, None, None, None]


class OracleNet:
    """已知 x0 时由 x_t 精确反推 ε（t 为原调度时间步）"""

    def __init__(self, x0: torch.Tensor, schedule: NoiseSchedule, cond_dim: int = 4):
        self.x0 = x0.to(torch.float64)
        self.schedule = schedule
        self.cond_dim = cond_dim

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        abar = self.schedule.alpha_bars[t.long()].reshape(-1, 1, 1, 1).to(x.dtype)
        return (x - abar.sqrt() * self.x0.to(x.dtype)) / (1.0 - abar).sqrt()


class FailingNet:
    """每次调用都抛出异常"""

    def __init__(self, cond_dim: int = 4):
        self.cond_dim = cond_dim

    def __call__(self, x, t, w):
        raise RuntimeError("模拟的网络故障")


class NanNet(torch.nn.Module):
    """带参数、输出 NaN 的网络"""

    def __init__(self, cond_dim: int = 4):
        super().__init__()
        self.cond_dim = cond_dim
        self.scale = torch.nn.Parameter(torch.ones(1, dtype=torch.float64))

    def forward(self, x, t, w):
        return x * self.scale * float("nan")


# ========== 测试数据工厂 ==========

@dataclass
class DataFactory:
    """
    测试数据工厂类

    集中管理测试数据创建，避免各测试文件重复代码
    """
    cond_dim: int = 4
    _counter: int = field(default=0, repr=False)

    def _next_id(self) -> int:
        self._counter += 1
        return self._counter

    def schedule(self, T: int = 100) -> NoiseSchedule:
        return make_linear_schedule(T)

    def table(self, classes: Sequence[int] = (), seed: int = 0) -> ConceptTable:
        """null + 每个类别一个概念"""
        table = ConceptTable.with_null(self.cond_dim, RngStream(seed, "test/null"))
        for c in classes:
            table.add(
                class_concept_id(c),
                RngStream(seed, "test/class", i=c).randn(self.cond_dim, dtype=torch.float32),
                class_id=c,
            )
        return table

    def tiny_net(self, in_channels: int = 1, seed: int = 0) -> EpsilonNet:
        with torch_seed(RngStream(seed, "test/net")):
            return EpsilonNet(in_channels=in_channels, channels=(8, 8), cond_dim=self.cond_dim, time_dim=8, groups=4)

    def image(self, channels: int = 3, resolution: int = 8, seed: Optional[int] = None) -> torch.Tensor:
        """8 位量化的随机图像"""
        seed = self._next_id() if seed is None else seed
        x = RngStream(seed, "test/image").randn(channels, resolution, resolution).clamp(-1, 1)
        return from_pixels(to_pixels(x))

    def square_mask(self, resolution: int = 8, lo: int = 2, hi: int = 6) -> torch.Tensor:
        mask = torch.zeros(resolution, resolution, dtype=torch.float64)
        mask[lo:hi, lo:hi] = 1.0
        return mask

    def records(
        self,
        classes: int = 2,
        per_class: int = 2,
        channels: int = 3,
        resolution: int = 8,
        masks: bool = True,
    ) -> List[DatasetRecord]:
        records = []
        for c in range(classes):
            for k in range(per_class):
                index = len(records)
                records.append(
                    DatasetRecord(
                        index=index,
                        image=self.image(channels, resolution, seed=1000 + index),
                        label=c,
                        image_id=f"c{c}_{k:04d}",
                        masks=[(c, self.square_mask(resolution))] if masks else [],
                    )
                )
        return records


@pytest.fixture
def factory() -> DataFactory:
    """提供测试数据工厂实例"""
    return DataFactory()


# ========== 小规模配置 ==========

def tiny_config(seed: int = 0) -> ConfigDoc:
    """分辨率 8、几步训练的配置，用于命令行与实验流程测试"""
    return ConfigDoc.model_validate({
        "schedule": {"timesteps": 20},
        "model": {"channels": [8, 8], "cond_dim": 4, "time_dim": 8, "groups": 4},
        "train": {"steps": 2, "batch_size": 4, "held_out_size": 4, "log_every": 0},
        "sampler": {"steps": 4, "batch_size": 4},
        "dataset": {"preset": "shapes2", "images_per_class": 10, "resolution": 8},
        "pretrain": {
            "backbone_images_per_class": 2,
            "extractor_images_per_class": 4,
            "extractor_steps": 2,
            "extractor_batch_size": 8,
            "feature_dim": 8,
        },
        "fewshot": {
            "q_grid": [1, 2],
            "trials": 2,
            "methods": ["baseline", "dafusion:k=2"],
            "probe_steps": 4,
            "inversion_steps": 2,
        },
        "table1": {
            "synthetic_images_per_real": 2,
            "textual_inversion_batch_size": 2,
            "classifier_batch_size": 8,
            "classifier_early_stopping_interval": 2,
        },
        "run": {"seed": seed},
    })


@pytest.fixture
def tiny_config_path(tmp_path: Path) -> Path:
    return save_config(tmp_path / "tiny.toml", tiny_config())
