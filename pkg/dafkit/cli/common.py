"""
子命令公共参数与配置解析
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Optional

from loguru import logger

from dafkit.core.config import settings
from dafkit.models import ConfigDoc
from dafkit.storage import load_config


def add_common_args(parser: argparse.ArgumentParser, *, out_help: str = "输出目录") -> None:
    parser.add_argument("--config", type=Path, default=None, help="配置文件 (TOML，或 .json)")
    parser.add_argument("--seed", type=int, default=None, help="覆盖 run.seed")
    parser.add_argument("--workers", type=int, default=None, help="并行线程数 (回退: DAFKIT_WORKERS)")
    parser.add_argument("--out", type=Path, default=None, help=out_help)


def resolve_config(args: argparse.Namespace, base: Optional[ConfigDoc] = None) -> ConfigDoc:
    """
    解析配置

    优先级: --config 文件 > base（例如检查点中保存的配置） > 默认值；--seed 最后覆盖 run.seed
    """
    if getattr(args, "config", None) is not None:
        config = load_config(args.config)
        logger.info("读取配置: {}", args.config)
    else:
        config = base if base is not None else ConfigDoc()
    seed = getattr(args, "seed", None)
    if seed is not None:
        config = config.model_copy(update={"run": config.run.model_copy(update={"seed": seed})})
    return config


def resolve_workers(args: argparse.Namespace, config: Optional[ConfigDoc] = None) -> int:
    if getattr(args, "workers", None):
        return max(1, args.workers)
    if config is not None and config.run.workers:
        return config.run.workers
    return settings.workers


def resolve_out(args: argparse.Namespace, default: str) -> Path:
    out = args.out if getattr(args, "out", None) is not None else settings.data_dir / default
    out.mkdir(parents=True, exist_ok=True)
    return out
