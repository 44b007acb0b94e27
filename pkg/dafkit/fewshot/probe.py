"""
冻结特征提取器 + 线性探针

特征提取器在与评估类别不相交的预训练类别上监督训练后冻结；
探针只训练线性头（零初始化），按固定间隔在验证集上评估并保留最佳检查点。
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger

from dafkit.augment import DatasetRecord
from dafkit.augment.transforms import flip
from dafkit.core.exceptions import ParameterException, TrainingDivergenceException
from dafkit.core.rng import RngStream, torch_seed
from dafkit.models import ProbeConfig, TrainConfig

BatchSource = Callable[[int], Sequence[Tuple[torch.Tensor, int, object]]]
Augment = Callable[[torch.Tensor, RngStream], torch.Tensor]


class FeatureExtractor(nn.Module):
    """小型卷积特征提取器：图像 -> f 维特征"""

    def __init__(self, in_channels: int = 3, feature_dim: int = 64, width: int = 32):
        super().__init__()
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.width = width
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.GroupNorm(8, width),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.GroupNorm(8, width),
            nn.SiLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(8, 2 * width),
            nn.SiLU(),
            nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(8, 2 * width),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.proj = nn.Linear(2 * width, feature_dim)

    def hparams(self) -> dict:
        return {"in_channels": self.in_channels, "feature_dim": self.feature_dim, "width": self.width}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.body(x))

    def freeze(self) -> "FeatureExtractor":
        self.requires_grad_(False)
        self.eval()
        return self


class LinearProbe(nn.Module):
    """冻结提取器 + 线性头 (c × f 权重 + c 偏置)"""

    def __init__(self, extractor: FeatureExtractor, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise ParameterException(f"类别数必须 >= 2: {num_classes}")
        self.extractor = extractor
        self.head = nn.Linear(extractor.feature_dim, num_classes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def num_classes(self) -> int:
        return self.head.out_features

    def features(self, images: torch.Tensor, chunk: int = 256) -> torch.Tensor:
        dtype = next(self.extractor.parameters()).dtype
        with torch.no_grad():
            parts = [self.extractor(images[k:k + chunk].to(dtype)) for k in range(0, images.shape[0], chunk)]
        return torch.cat(parts)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


@dataclass
class ProbeResult:
    """探针训练结果"""
    probe: LinearProbe
    best_accuracy: float
    best_step: int
    history: List[Tuple[int, float]] = field(default_factory=list)


def _accuracy(head: nn.Module, feats: torch.Tensor, labels: torch.Tensor) -> float:
    with torch.no_grad():
        return float((head(feats).argmax(dim=1) == labels).to(torch.float64).mean())


def train_probe(
    probe: LinearProbe,
    batches: BatchSource,
    validation: Tuple[torch.Tensor, torch.Tensor],
    cfg: ProbeConfig,
    *,
    augment: Optional[Augment] = None,
) -> ProbeResult:
    """
    训练线性头

    batches(step) 返回第 step 步的 (图像, 类别, 来源) 列表；第 0 步、每 eval_interval 步与最后一步评估，
    返回最佳检查点（并列取最早）。
    """
    val_images, val_labels = validation
    if val_images.shape[0] == 0:
        raise ParameterException("验证集不能为空")
    val_feats = probe.features(val_images)
    root = RngStream(cfg.seed, "probe")

    best = _accuracy(probe.head, val_feats, val_labels)
    best_step = 0
    best_state = copy.deepcopy(probe.head.state_dict())
    history = [(0, best)]
    if cfg.steps == 0:
        return ProbeResult(probe, best, best_step, history)

    optimizer = torch.optim.Adam(probe.head.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    for step in range(1, cfg.steps + 1):
        items = batches(step)
        images = [img for img, _, _ in items]
        if augment is not None:
            images = [augment(img, root.child(tag="augment", i=step, j=b)) for b, img in enumerate(images)]
        labels = torch.tensor([label for _, label, _ in items], dtype=torch.long)
        feats = probe.features(torch.stack(images))

        loss = F.cross_entropy(probe.head(feats), labels)
        if not bool(torch.isfinite(loss)):
            raise TrainingDivergenceException(step, f"探针训练发散: step={step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if step % cfg.eval_interval == 0 or step == cfg.steps:
            acc = _accuracy(probe.head, val_feats, val_labels)
            history.append((step, acc))
            if acc > best:
                best, best_step = acc, step
                best_state = copy.deepcopy(probe.head.state_dict())

    probe.head.load_state_dict(best_state)
    return ProbeResult(probe, best, best_step, history)


def flip_augmenter(modes: Sequence[str], probability: float) -> Augment:
    """训练时随机翻转：每种模式独立以给定概率生效"""

    def apply(image: torch.Tensor, stream: RngStream) -> torch.Tensor:
        u = torch.rand(len(modes), generator=stream.generator(), dtype=torch.float64).tolist()
        for mode, draw in zip(modes, u):
            if draw < probability:
                image = flip(image, mode)
        return image

    return apply


def train_extractor(
    records: Sequence[DatasetRecord],
    cfg: TrainConfig,
    *,
    feature_dim: int = 64,
) -> FeatureExtractor:
    """在预训练类别上监督训练特征提取器，返回冻结后的提取器"""
    if not records:
        raise ParameterException("特征提取器训练集不能为空")
    labels = sorted({r.label for r in records})
    label_index = {label: k for k, label in enumerate(labels)}
    images = torch.stack([r.image for r in records]).to(torch.float32)
    targets = torch.tensor([label_index[r.label] for r in records], dtype=torch.long)

    root = RngStream(cfg.seed, "extractor")
    with torch_seed(root.child(tag="init")):
        extractor = FeatureExtractor(in_channels=images.shape[1], feature_dim=feature_dim)
        head = nn.Linear(feature_dim, len(labels))
    optimizer = torch.optim.Adam(
        list(extractor.parameters()) + list(head.parameters()),
        lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps,
    )
    augment = flip_augmenter(["horizontal", "vertical"], 0.5)
    logger.info("开始训练特征提取器: steps={} 类别数={} 样本数={}", cfg.steps, len(labels), len(records))

    extractor.train()
    for step in range(1, cfg.steps + 1):
        gen = root.child(i=step).generator()
        picks = torch.randint(len(records), (cfg.batch_size,), generator=gen)
        batch = torch.stack([
            augment(images[k], root.child(tag="augment", i=step, j=b)) for b, k in enumerate(picks.tolist())
        ])
        loss = F.cross_entropy(head(extractor(batch)), targets[picks])
        if not bool(torch.isfinite(loss)):
            raise TrainingDivergenceException(step, f"特征提取器训练发散: step={step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps):
            logger.info("特征提取器 step {}/{} loss={:.4f}", step, cfg.steps, float(loss))

    extractor.freeze()
    with torch.no_grad():
        acc = float((head(extractor(images)).argmax(dim=1) == targets).to(torch.float64).mean())
    logger.info("特征提取器训练完成: 训练集准确率 {:.3f}", acc)
    return extractor
