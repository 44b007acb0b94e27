"""
invert 子命令：在类别图像上微调概念嵌入，θ 保持不变
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Dict, List, Tuple

import torch
from loguru import logger

from dafkit.core.exceptions import CheckpointException
from dafkit.diffusion import finetune_concepts
from dafkit.models import Granularity
from dafkit.storage import ManifestRecorder, load_backbone, read_dataset_dir, save_backbone, theta_hash

from .common import add_common_args, resolve_config, resolve_out
from .train import BACKBONE_NAME


def register(subparsers) -> None:
    parser = subparsers.add_parser("invert", help="概念嵌入微调")
    add_common_args(parser, out_help="更新后检查点的输出目录")
    parser.add_argument("--checkpoint", type=Path, required=True, help="骨干检查点")
    parser.add_argument("--data", type=Path, required=True, help="类别图像目录")
    parser.add_argument(
        "--granularity", choices=[g.value for g in Granularity], default=None,
        help="pooled: 每类一个嵌入；specific: 每张图一个嵌入 (默认: fewshot.granularity)",
    )
    parser.set_defaults(handler=cmd_invert)


def cmd_invert(args: argparse.Namespace) -> int:
    checkpoint = load_backbone(args.checkpoint)
    config = resolve_config(args, base=checkpoint.config)
    granularity = Granularity(args.granularity or config.fewshot.granularity)
    out = resolve_out(args, "invert")
    recorder = ManifestRecorder("invert", config.config_hash(), out)
    recorder.add_input("checkpoint", args.checkpoint)
    recorder.add_input("data", args.data)

    records = read_dataset_dir(args.data)
    class_images: Dict[int, List[Tuple[str, torch.Tensor]]] = {}
    for record in records:
        class_images.setdefault(record.label, []).append((record.image_id, record.image))

    before = theta_hash(checkpoint.net)
    with recorder.stage("invert"):
        table = finetune_concepts(
            checkpoint.net,
            checkpoint.table,
            class_images,
            checkpoint.schedule,
            config.inversion_train_config(),
            granularity=granularity,
            init=config.table1.textual_inversion_token_initialization,
        )
    if theta_hash(checkpoint.net) != before:
        raise CheckpointException("概念微调修改了网络参数")
    table.freeze_all()

    added = [cid for cid in table.ids() if cid not in checkpoint.table]
    path = save_backbone(
        out / BACKBONE_NAME, checkpoint.net, table, checkpoint.schedule, config,
        extra={**checkpoint.meta, "granularity": granularity.value},
    )
    recorder.add_outputs([path])
    recorder.note(granularity=granularity.value, new_concepts=added, theta_hash=before)
    recorder.write()
    logger.info("概念微调完成: 新增 {} 个概念, 粒度 {}", len(added), granularity.value)
    return 0
