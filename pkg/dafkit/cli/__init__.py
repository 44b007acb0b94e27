"""
命令行子命令模块

每个子命令模块提供 register(subparsers)，并通过 set_defaults(handler=...) 绑定处理函数
"""
from . import train, invert, augment, fewshot, report, toy

COMMANDS = [train, invert, augment, fewshot, report, toy]

__all__ = [
    "COMMANDS",
    "train",
    "invert",
    "augment",
    "fewshot",
    "report",
    "toy",
]
