"""
train 子命令：骨干 ε_θ 预训练（可选同时训练特征提取器）
"""
from __future__ import annotations

import argparse
from pathlib import Path

from loguru import logger

from dafkit.fewshot import build_extractor, train_backbone
from dafkit.storage import ManifestRecorder, read_dataset_dir, save_backbone, save_config, save_extractor

from .common import add_common_args, resolve_config, resolve_out

BACKBONE_NAME = "backbone.dafkit"
EXTRACTOR_NAME = "extractor.dafkit"


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="预训练骨干网络")
    add_common_args(parser, out_help="检查点输出目录")
    parser.add_argument("--data", type=Path, default=None, help="数据集目录 (默认使用 pretrain.backbone_preset 玩具数据)")
    parser.add_argument("--extractor", action="store_true", help="同时训练特征提取器")
    parser.set_defaults(handler=cmd_train)


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out = resolve_out(args, "train")
    recorder = ManifestRecorder("train", config.config_hash(), out)
    if args.config is not None:
        recorder.add_input("config", args.config)

    records = None
    if args.data is not None:
        recorder.add_input("data", args.data)
        records = read_dataset_dir(args.data)

    with recorder.stage("backbone"):
        result = train_backbone(config, records=records)
    outputs = [
        save_backbone(
            out / BACKBONE_NAME,
            result.net,
            result.table,
            result.schedule,
            config,
            extra={"held_out_initial": result.held_out_initial, "held_out_final": result.held_out_final},
        ),
        save_config(out / "config.toml", config),
    ]
    recorder.note(
        held_out_initial=result.held_out_initial,
        held_out_final=result.held_out_final,
        held_out_reduction=result.held_out_reduction,
    )

    if args.extractor:
        with recorder.stage("extractor"):
            extractor = build_extractor(config)
        outputs.append(save_extractor(out / EXTRACTOR_NAME, extractor, config))

    recorder.add_outputs(outputs)
    recorder.write()
    logger.info("检查点已写出: {}", out / BACKBONE_NAME)
    return 0
