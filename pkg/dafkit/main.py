"""
命令行主入口

DA-Fusion 桌面规模复现工具：train / invert / augment / fewshot / report / toy
退出码：0 成功，1 未处理异常，2 参数/输入错误，3 数值失败，4 部分完成
"""
from __future__ import annotations

import argparse
from typing import Optional, Sequence

import torch
from loguru import logger

from dafkit.cli import COMMANDS
from dafkit.core.config import settings
from dafkit.core.exceptions import AppException, app_exception_handler, general_exception_handler
from dafkit.core.logging import setup_logging


def create_parser() -> argparse.ArgumentParser:
    """
    创建命令行解析器
    """
    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="基于扩散模型的数据增强（桌面规模复现）",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default=settings.log_level, help=f"日志级别 (默认: {settings.log_level})")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for module in COMMANDS:
        module.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 的用法错误退出码为 2，--help 为 0
        return int(e.code or 0)

    setup_logging(args.log_level)
    if settings.torch_threads:
        torch.set_num_threads(settings.torch_threads)
    logger.info("启动命令: {} ({})", args.command, settings.app_env)

    try:
        return args.handler(args)
    except AppException as exc:
        return app_exception_handler(args.command, exc)
    except KeyboardInterrupt:
        logger.warning("命令被中断: {}", args.command)
        return 130
    except Exception as exc:
        return general_exception_handler(args.command, exc)
