"""
实验报告输出

report/metrics.csv   每个单元一行 (dataset, method, q, trial, accuracy, steps_to_best)
report/summary.csv   每个 (数据集, 方法) 一行
report/report.json   无损序列化
report/curves.svg    准确率-样本数曲线与 68% 置信带（尽力而为，失败只记警告）
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

from dafkit.core.exceptions import ParameterException
from dafkit.models import CellStatus, ExperimentReport

from .base import JsonRepository, atomic_write_bytes, atomic_write_text

METRICS_NAME = "metrics.csv"
SUMMARY_NAME = "summary.csv"
REPORT_NAME = "report.json"
CURVES_NAME = "curves.svg"

METRICS_COLUMNS = ["dataset", "method", "q", "trial", "accuracy", "steps_to_best"]
SUMMARY_COLUMNS = [
    "dataset", "method", "auc", "auc_ci_low", "auc_ci_high", "normalized_score", "auc_gain_vs_reference",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(columns: List[str], rows: List[Dict[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def metrics_csv(report: ExperimentReport) -> str:
    """失败单元的准确率留空"""
    cells = sorted(report.cells, key=lambda c: (c.dataset, report.methods.index(c.method), c.q, c.trial))
    rows = [
        {
            "dataset": c.dataset,
            "method": c.method,
            "q": c.q,
            "trial": c.trial,
            "accuracy": c.accuracy if c.status == CellStatus.OK else None,
            "steps_to_best": c.steps_to_best if c.status == CellStatus.OK else None,
        }
        for c in cells
    ]
    return _csv(METRICS_COLUMNS, rows)


def summary_csv(report: ExperimentReport) -> str:
    return _csv(SUMMARY_COLUMNS, [s.model_dump() for s in report.summaries])


def render_curves(report: ExperimentReport) -> bytes:
    """每个数据集一个子图：均值折线 + 68% 置信带，横轴 log2 q"""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # 固定元数据，保证同一报告渲染出相同字节
    matplotlib.rcParams["svg.hashsalt"] = "dafkit"
    datasets = report.datasets
    fig, axes = plt.subplots(1, len(datasets), figsize=(5 * len(datasets), 4), squeeze=False)
    for ax, dataset in zip(axes[0], datasets):
        for summary in (s for s in report.summaries if s.dataset == dataset and s.curve):
            qs = [p.q for p in summary.curve]
            ax.plot(qs, [p.mean for p in summary.curve], marker="o", label=summary.method)
            ax.fill_between(qs, [p.ci_low for p in summary.curve], [p.ci_high for p in summary.curve], alpha=0.2)
        ax.set_xscale("log", base=2)
        ax.set_xticks(report.q_grid, [str(q) for q in report.q_grid])
        ax.set_xlabel("examples per class")
        ax.set_ylabel("validation accuracy")
        ax.set_title(dataset)
        ax.legend(fontsize=8)
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


class ReportRepository(JsonRepository[ExperimentReport]):
    """报告目录"""

    def __init__(self, root: Path | str):
        super().__init__(ExperimentReport, root)

    def write(self, report: ExperimentReport, *, curves: bool = True) -> List[Path]:
        """写出全部报告文件，返回写出的路径"""
        written = [
            atomic_write_text(self.path(METRICS_NAME), metrics_csv(report)),
            atomic_write_text(self.path(SUMMARY_NAME), summary_csv(report)),
            self.save(REPORT_NAME, report),
        ]
        if curves:
            svg = self.write_curves(report)
            if svg is not None:
                written.append(svg)
        return written

    def write_curves(self, report: ExperimentReport) -> Optional[Path]:
        try:
            return atomic_write_bytes(self.path(CURVES_NAME), render_curves(report))
        except Exception as e:
            logger.warning("曲线图渲染失败，已跳过: {}", e)
            return None

    def load(self) -> ExperimentReport:
        report = self.get(REPORT_NAME)
        if report is None:
            raise ParameterException(f"报告不存在: {self.path(REPORT_NAME)}")
        return report
