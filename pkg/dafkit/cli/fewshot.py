"""
fewshot 子命令：小样本实验编排与报告
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Optional, Tuple

from loguru import logger

from dafkit.core.exceptions import ParameterException, PartialCompletionException
from dafkit.diffusion import ConceptTable, EpsilonNet, NoiseSchedule
from dafkit.fewshot import (
    ExperimentResources,
    FeatureExtractor,
    build_extractor,
    eval_datasets,
    run_experiment,
    train_backbone,
)
from dafkit.models import ConfigDoc, Granularity, MethodKind, MethodSpec
from dafkit.storage import (
    ManifestRecorder,
    ReportRepository,
    load_backbone,
    load_extractor,
    save_backbone,
    save_extractor,
)

from .common import add_common_args, resolve_config, resolve_out, resolve_workers
from .train import BACKBONE_NAME, EXTRACTOR_NAME


def register(subparsers) -> None:
    parser = subparsers.add_parser("fewshot", help="运行小样本实验")
    add_common_args(parser, out_help="实验输出目录 (报告写到 <out>/report)")
    parser.add_argument(
        "--methods", nargs="+", default=None,
        help='方法列表，例如 baseline real-guidance "dafusion:k=4" "dafusion-masked:mode=foreground"',
    )
    parser.add_argument("--checkpoint", type=Path, default=None, help=f"骨干检查点 (默认: <out>/{BACKBONE_NAME})")
    parser.add_argument("--extractor", type=Path, default=None, help=f"特征提取器 (默认: <out>/{EXTRACTOR_NAME})")
    parser.add_argument("--auto", action="store_true", help="缺少的前置阶段自动训练")
    parser.add_argument("--alpha", type=float, default=None, help="覆盖生成式方法的 α")
    parser.add_argument("--granularity", choices=[g.value for g in Granularity], default=None)
    parser.set_defaults(handler=cmd_fewshot)


def parse_methods(texts: List[str], alpha: Optional[float] = None) -> List[MethodSpec]:
    methods = []
    for text in texts:
        try:
            method = MethodSpec.parse(text)
        except ValueError as e:
            raise ParameterException(f"方法格式错误 {text!r}: {e}") from e
        if alpha is not None and method.alpha is None and method.kind != MethodKind.BASELINE:
            method = method.model_copy(update={"alpha": alpha})
        methods.append(method)
    return methods


def _backbone(
    path: Path, config: ConfigDoc, auto: bool, recorder: ManifestRecorder
) -> Tuple[EpsilonNet, ConceptTable, NoiseSchedule]:
    if path.exists():
        recorder.add_input("checkpoint", path)
        checkpoint = load_backbone(path)
        return checkpoint.net, checkpoint.table, checkpoint.schedule
    if not auto:
        raise ParameterException(f"检查点不存在: {path}（使用 --auto 自动训练）")
    with recorder.stage("backbone"):
        result = train_backbone(config)
    recorder.add_outputs([save_backbone(path, result.net, result.table, result.schedule, config)])
    recorder.note(held_out_reduction=result.held_out_reduction)
    return result.net, result.table, result.schedule


def _extractor(path: Path, config: ConfigDoc, auto: bool, recorder: ManifestRecorder) -> FeatureExtractor:
    if path.exists():
        recorder.add_input("extractor", path)
        return load_extractor(path)
    if not auto:
        raise ParameterException(f"特征提取器不存在: {path}（使用 --auto 自动训练）")
    with recorder.stage("extractor"):
        extractor = build_extractor(config)
    recorder.add_outputs([save_extractor(path, extractor, config)])
    return extractor


def cmd_fewshot(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.granularity is not None:
        config = config.model_copy(
            update={"fewshot": config.fewshot.model_copy(update={"granularity": args.granularity})}
        )
    methods = parse_methods(args.methods or config.fewshot.methods, args.alpha)
    out = resolve_out(args, "fewshot")
    recorder = ManifestRecorder("fewshot", config.config_hash(), out)
    if args.config is not None:
        recorder.add_input("config", args.config)

    net, table, schedule = _backbone(args.checkpoint or out / BACKBONE_NAME, config, args.auto, recorder)
    extractor = _extractor(args.extractor or out / EXTRACTOR_NAME, config, args.auto, recorder)
    datasets, spurge = eval_datasets(config)
    resources = ExperimentResources(net, table, schedule, extractor, datasets, spurge)

    with recorder.stage("experiment"):
        report = run_experiment(
            methods,
            config.fewshot.q_grid,
            config.fewshot.trials,
            config,
            resources,
            workers=resolve_workers(args, config),
        )
    recorder.add_outputs(ReportRepository(out / "report").write(report))
    failed = report.failed_cells
    recorder.note(
        methods=[m.name for m in methods],
        failed_cells=len(failed),
        degeneracy_ok=report.degeneracy_ok,
        integrity_ok=report.integrity_ok,
    )
    recorder.write()

    for summary in report.summaries:
        logger.info(
            "{} / {}: AUC={} normalized={}", summary.dataset, summary.method,
            "n/a" if summary.auc is None else f"{summary.auc:.4f}",
            "n/a" if summary.normalized_score is None else f"{summary.normalized_score:.3f}",
        )
    if failed:
        raise PartialCompletionException(len(failed), len(report.cells))
    return 0
