"""
augment 子命令：为数据集目录生成 N × M 合成存储（支持中断续跑）
"""
from __future__ import annotations

import argparse
from pathlib import Path

from loguru import logger

from dafkit.augment import (
    GenerationContext,
    SyntheticStore,
    build_dafusion_policy,
    build_store,
    real_guidance_policy,
    scaled_dilation_radius,
)
from dafkit.core.exceptions import ParameterException, PartialCompletionException
from dafkit.core.rng import RngStream
from dafkit.models import AugmentationPolicy, ConfigDoc, MaskMode, TransformKind
from dafkit.storage import ManifestRecorder, StoreRepository, load_backbone, read_dataset_dir

from .common import add_common_args, resolve_config, resolve_out, resolve_workers


def register(subparsers) -> None:
    parser = subparsers.add_parser("augment", help="生成合成存储")
    add_common_args(parser, out_help="存储目录")
    parser.add_argument("--checkpoint", type=Path, required=True, help="含概念嵌入的检查点")
    parser.add_argument("--data", type=Path, required=True, help="数据集目录")
    parser.add_argument("--k", type=int, default=None, help="堆叠数 (默认: table1.stacked_augmentations)")
    parser.add_argument("--t0", type=float, default=None, help="覆盖所有条目的 t0")
    parser.add_argument("--M", dest="m", type=int, default=None, help="每张真实图像的增强数")
    parser.add_argument(
        "--mask-mode", choices=[m.value for m in MaskMode], default=MaskMode.NONE.value, help="掩码重绘模式",
    )
    parser.add_argument("--real-guidance", action="store_true", help="Real Guidance 模式: 空概念, t0=0.5")
    parser.set_defaults(handler=cmd_augment)


def policy_from_args(args: argparse.Namespace, config: ConfigDoc) -> AugmentationPolicy:
    if args.real_guidance:
        return real_guidance_policy(args.t0 if args.t0 is not None else config.table1.real_guidance_strength)
    k = args.k or config.table1.stacked_augmentations
    mode = MaskMode(args.mask_mode)
    base = TransformKind.SDEDIT if mode == MaskMode.NONE else TransformKind.SDEDIT_MASKED
    probabilities = None
    if config.table1.activation_probabilities is not None and k == config.table1.stacked_augmentations:
        probabilities = config.table1.activation_probabilities
    return build_dafusion_policy(k, base, mask_mode=mode, t0=args.t0, probabilities=probabilities)


def cmd_augment(args: argparse.Namespace) -> int:
    checkpoint = load_backbone(args.checkpoint)
    config = resolve_config(args, base=checkpoint.config)
    out = resolve_out(args, "store")
    recorder = ManifestRecorder("augment", config.config_hash(), out)
    recorder.add_input("checkpoint", args.checkpoint)
    recorder.add_input("data", args.data)

    records = read_dataset_dir(args.data)
    if not args.real_guidance:
        missing = checkpoint.table.missing_classes(sorted({r.label for r in records}))
        if missing:
            raise ParameterException(f"概念表缺少类别: {missing}", data={"missing_classes": missing})

    policy = policy_from_args(args, config)
    m = args.m or config.images_per_real()
    if m < 1:
        raise ParameterException(f"M 必须 >= 1: {m}")
    context = GenerationContext(
        net=checkpoint.net,
        table=checkpoint.table,
        schedule=checkpoint.schedule,
        sampler=config.sampler_config(),
        real_guidance=args.real_guidance,
        mask_radius=scaled_dilation_radius(
            config.fewshot.mask_dilation, config.table1.resolution, records[0].image.shape[-1]
        ),
        workers=resolve_workers(args, config),
        log_every=max(1, len(records) * m // 20),
    )

    repo = StoreRepository(out)
    store = repo.load(len(records), m, policy)
    with recorder.stage("generate"):
        if store is None:
            store = SyntheticStore(len(records), m, policy)
        repo.attach(store)
        build_store(
            records, policy, m, context, RngStream(config.run.seed, "augment"),
            existing=store, on_record=repo.on_record,
        )
    manifest_path = repo.flush()

    outputs = [manifest_path] + [repo.image_path(r) for r in store.records() if store.has(r.i, r.j)]
    recorder.add_outputs(outputs)
    failed = store.failed_records()
    recorder.note(n=len(records), m=m, failed=len(failed), real_guidance=args.real_guidance)
    recorder.write()
    if failed:
        raise PartialCompletionException(len(failed), len(records) * m)
    logger.info("合成存储已写出: {} ({} 条记录)", out, len(store))
    return 0
