"""
实验前置阶段

骨干预训练（含留出批损失）、特征提取器预训练与评估数据集生成。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from loguru import logger

from dafkit.augment import DatasetRecord
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream, torch_seed
from dafkit.diffusion import (
    ConceptTable,
    EpsilonNet,
    NoiseSchedule,
    held_out_loss,
    make_linear_schedule,
    pretrain_concept_id,
    train_denoiser,
)
from dafkit.models import ConfigDoc, TrainConfig

from .presets import get_preset_loader
from .probe import FeatureExtractor, train_extractor
from .toy_data import gen_toy_dataset


@dataclass
class BackboneResult:
    """骨干训练产物"""
    net: EpsilonNet
    table: ConceptTable
    schedule: NoiseSchedule
    held_out_initial: float
    held_out_final: float

    @property
    def held_out_reduction(self) -> float:
        if self.held_out_initial <= 0:
            return 0.0
        return 1.0 - self.held_out_final / self.held_out_initial


def build_schedule(config: ConfigDoc) -> NoiseSchedule:
    s = config.schedule
    return make_linear_schedule(s.timesteps, s.beta_start, s.beta_end)


def build_net(config: ConfigDoc, in_channels: int = 3) -> EpsilonNet:
    """按 [model] 一节构建网络；参数初始化由 run.seed 决定"""
    m = config.model
    with torch_seed(RngStream(config.run.seed, "backbone/init")):
        return EpsilonNet(
            in_channels=in_channels,
            channels=m.channels,
            cond_dim=m.cond_dim,
            time_dim=m.time_dim,
            groups=m.groups,
        )


def backbone_records(config: ConfigDoc) -> Tuple[List[DatasetRecord], List[str]]:
    """骨干预训练数据与各类别名"""
    loader = get_preset_loader()
    spec = loader.toy_spec(
        config.pretrain.backbone_preset,
        images_per_class=config.pretrain.backbone_images_per_class,
        resolution=config.dataset.resolution,
        seed=config.run.seed,
    )
    return gen_toy_dataset(spec, name=config.pretrain.backbone_preset), [c.name for c in spec.classes]


def held_out_batch(config: ConfigDoc) -> List[DatasetRecord]:
    """与训练数据不同种子生成的留出批"""
    loader = get_preset_loader()
    preset = config.pretrain.backbone_preset
    classes = len(loader.preset(preset)["classes"])
    spec = loader.toy_spec(
        preset,
        images_per_class=math.ceil(config.train.held_out_size / classes),
        resolution=config.dataset.resolution,
        seed=config.run.seed + 1,
    )
    return gen_toy_dataset(spec)[: config.train.held_out_size]


def split_held_out(
    records: Sequence[DatasetRecord], size: int
) -> Tuple[List[DatasetRecord], List[DatasetRecord]]:
    """从目录数据集中按固定间隔取出留出批，其余用于训练"""
    if len(records) < 2:
        raise ParameterException("骨干训练至少需要 2 张图像")
    size = min(size, len(records) // 2)
    stride = len(records) // size
    held = set(range(0, stride * size, stride))
    return [r for k, r in enumerate(records) if k not in held], [records[k] for k in sorted(held)]


def train_backbone(
    config: ConfigDoc,
    cfg: Optional[TrainConfig] = None,
    *,
    records: Optional[Sequence[DatasetRecord]] = None,
) -> BackboneResult:
    """
    在预训练数据上训练 ε_θ 与预训练概念，返回网络、概念表与留出损失

    records 为空时使用 pretrain.backbone_preset 玩具数据；否则每个类别对应一个预训练概念 pretrain/<class_id>
    """
    cfg = cfg or config.backbone_train_config()
    if records is None:
        records, names = backbone_records(config)
        held_records = held_out_batch(config)
    else:
        names = [str(c) for c in range(max(r.label for r in records) + 1)]
        records, held_records = split_held_out(records, config.train.held_out_size)
    schedule = build_schedule(config)
    net = build_net(config, in_channels=records[0].image.shape[0])

    table = ConceptTable.with_null(config.model.cond_dim, RngStream(config.run.seed, "concepts/null"))
    for k, name in enumerate(names):
        table.add(
            pretrain_concept_id(name),
            RngStream(config.run.seed, "concepts/pretrain", i=k).randn(config.model.cond_dim, dtype=torch.float32) * 0.1,
            trainable=True,
        )
    dataset = [(r.image, pretrain_concept_id(names[r.label])) for r in records]
    held_out = [(r.image, pretrain_concept_id(names[r.label])) for r in held_records]
    held_rng = RngStream(config.run.seed, "held_out").fork(len(held_out))

    initial = held_out_loss(net, table, held_out, schedule, held_rng)
    train_denoiser(dataset, net, table, schedule, cfg, uncond_prob=config.model.uncond_prob)
    final = held_out_loss(net, table, held_out, schedule, held_rng)
    table.freeze_all()
    net.requires_grad_(False)
    logger.info("骨干训练完成: 留出损失 {:.2f} -> {:.2f} ({:.1%} 下降)", initial, final, 1 - final / max(initial, 1e-12))
    return BackboneResult(net, table, schedule, initial, final)


def extractor_records(config: ConfigDoc) -> List[DatasetRecord]:
    spec = get_preset_loader().toy_spec(
        config.pretrain.extractor_preset,
        images_per_class=config.pretrain.extractor_images_per_class,
        resolution=config.dataset.resolution,
        seed=config.run.seed,
    )
    return gen_toy_dataset(spec, name=config.pretrain.extractor_preset)


def build_extractor(config: ConfigDoc) -> FeatureExtractor:
    p = config.pretrain
    cfg = TrainConfig(
        learning_rate=p.extractor_learning_rate,
        batch_size=p.extractor_batch_size,
        steps=p.extractor_steps,
        seed=config.run.seed,
        log_every=config.train.log_every,
    )
    return train_extractor(extractor_records(config), cfg, feature_dim=p.feature_dim)


def eval_datasets(config: ConfigDoc) -> Tuple[Dict[str, List[DatasetRecord]], Dict[str, bool]]:
    """评估数据集（按预设名）与各自是否为 spurge 对照"""
    loader = get_preset_loader()
    datasets: Dict[str, List[DatasetRecord]] = {}
    spurge: Dict[str, bool] = {}
    for preset in config.dataset_presets():
        spec = loader.toy_spec(
            preset,
            images_per_class=config.dataset.images_per_class,
            resolution=config.dataset.resolution,
            seed=config.dataset.seed,
        )
        datasets[preset] = gen_toy_dataset(spec, name=preset)
        spurge[preset] = loader.is_spurge(preset) or config.fewshot.spurge_analog
    return datasets, spurge
