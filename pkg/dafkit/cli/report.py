"""
report 子命令：由 report.json 重新生成 CSV 与曲线图
"""
from __future__ import annotations

import argparse
from pathlib import Path

from loguru import logger

from dafkit.storage import ManifestRecorder, ReportRepository


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="重新渲染实验报告")
    parser.add_argument("report_dir", type=Path, help="包含 report.json 的目录")
    parser.add_argument("--no-curves", action="store_true", help="不渲染 curves.svg")
    parser.set_defaults(handler=cmd_report)


def cmd_report(args: argparse.Namespace) -> int:
    repo = ReportRepository(args.report_dir)
    report = repo.load()
    recorder = ManifestRecorder("report", "", args.report_dir)
    recorder.add_input("report", repo.path("report.json"))
    with recorder.stage("render"):
        written = repo.write(report, curves=not args.no_curves)
    recorder.add_outputs(written)
    recorder.note(complete=report.complete, degeneracy_ok=report.degeneracy_ok)
    recorder.write()
    logger.info("报告已重新生成: {}", args.report_dir)
    return 0
