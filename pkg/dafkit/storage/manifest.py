"""运行清单记录"""
from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterable, Iterator

from loguru import logger

from dafkit.models import ArtifactEntry, RunManifest

from .base import JsonRepository, file_sha1

RUN_MANIFEST_NAME = "run_manifest.json"


class ManifestRecorder:
    """收集一条命令的输入、产物哈希与各阶段耗时，最后写到输出目录"""

    def __init__(self, command: str, config_hash: str, out_dir: Path | str):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(command=command, config_hash=config_hash)

    def add_input(self, name: str, path: Path | str) -> None:
        self.manifest.inputs[name] = str(path)

    def add_outputs(self, paths: Iterable[Path | str]) -> None:
        for path in paths:
            path = Path(path)
            try:
                relative = str(path.resolve().relative_to(self.out_dir.resolve()))
            except ValueError:
                relative = str(path)
            self.manifest.outputs.append(
                ArtifactEntry(path=relative, sha1=file_sha1(path), size=path.stat().st_size)
            )

    def note(self, **extra: Any) -> None:
        self.manifest.extra.update(extra)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.manifest.timings[name] = round(elapsed, 3)
            logger.info("阶段 {} 完成，耗时 {:.1f}s", name, elapsed)

    def write(self) -> Path:
        self.manifest.outputs.sort(key=lambda a: a.path)
        return JsonRepository(RunManifest, self.out_dir).save(RUN_MANIFEST_NAME, self.manifest)


def verify_manifest(out_dir: Path | str) -> list[str]:
    """返回哈希与磁盘内容不一致（或缺失）的产物路径"""
    out_dir = Path(out_dir)
    manifest = JsonRepository(RunManifest, out_dir).get(RUN_MANIFEST_NAME)
    if manifest is None:
        return [RUN_MANIFEST_NAME]
    bad = []
    for artifact in manifest.outputs:
        path = Path(artifact.path)
        if not path.is_absolute():
            path = out_dir / path
        if not path.exists() or file_sha1(path) != artifact.sha1:
            bad.append(artifact.path)
    return bad
