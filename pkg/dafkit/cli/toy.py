"""
toy 子命令：把玩具数据集预设导出为数据集目录
"""
from __future__ import annotations

import argparse

from loguru import logger

from dafkit.core.exceptions import ParameterException
from dafkit.fewshot import gen_toy_dataset
from dafkit.fewshot.presets import get_preset_loader
from dafkit.storage import ManifestRecorder, write_dataset_dir

from .common import add_common_args, resolve_config, resolve_out


def register(subparsers) -> None:
    parser = subparsers.add_parser("toy", help="导出玩具数据集")
    add_common_args(parser, out_help="数据集目录")
    parser.add_argument("--preset", default=None, help="预设名 (默认: dataset.preset)")
    parser.add_argument("--images-per-class", type=int, default=None)
    parser.add_argument("--resolution", type=int, default=None)
    parser.set_defaults(handler=cmd_toy)


def cmd_toy(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    loader = get_preset_loader()
    preset = args.preset or config.dataset.preset
    if preset not in loader.preset_names():
        raise ParameterException(f"未知预设: {preset}，可选: {loader.preset_names()}")
    out = resolve_out(args, f"toy/{preset}")
    recorder = ManifestRecorder("toy", config.config_hash(), out)

    with recorder.stage("generate"):
        spec = loader.toy_spec(
            preset,
            images_per_class=args.images_per_class or config.dataset.images_per_class,
            resolution=args.resolution or config.dataset.resolution,
            seed=config.dataset.seed if args.seed is None else args.seed,
        )
        records = gen_toy_dataset(spec, name=preset)
    with recorder.stage("write"):
        recorder.add_outputs(write_dataset_dir(out, records))
    recorder.note(preset=preset, images=len(records), classes=len(spec.classes))
    recorder.write()
    logger.info("玩具数据集已导出: {} ({} 张)", out, len(records))
    return 0
