"""
合成存储持久化

布局: <root>/<class_id>/<image_id>/aug_<j>.png 与 <root>/manifest.json；
清单是完整性的唯一依据，已成功且 PNG 存在的记录在续跑时直接复用。
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import torch
from loguru import logger

from dafkit.augment import SyntheticStore
from dafkit.core.exceptions import ParameterException
from dafkit.models import AugmentationPolicy, RecordStatus, StoreManifest, StoreRecord

from .base import JsonRepository
from .images import load_image, save_image

MANIFEST_NAME = "manifest.json"


class StoreRepository(JsonRepository[StoreManifest]):
    """合成存储目录"""

    def __init__(self, root: Path | str, flush_every: int = 16):
        super().__init__(StoreManifest, root)
        self.flush_every = max(1, flush_every)
        self._store: Optional[SyntheticStore] = None
        self._unsaved = 0

    def image_path(self, record: StoreRecord) -> Path:
        return self.root / record.path

    def load(self, n: int, m: int, policy: AugmentationPolicy) -> Optional[SyntheticStore]:
        """
        读取已有存储用于续跑

        目录中没有清单时返回 None；N、M 或策略与本次不一致时报参数错误
        """
        manifest = self.get(MANIFEST_NAME)
        if manifest is None:
            return None
        if manifest.n != n or manifest.m != m or manifest.policy != policy:
            raise ParameterException(
                f"存储目录 {self.root} 已包含不同参数的存储 (N={manifest.n}, M={manifest.m})，请更换输出目录"
            )
        store = SyntheticStore(n, m, policy)
        reused = 0
        for record in manifest.records:
            if record.status != RecordStatus.OK or not self.image_path(record).exists():
                continue
            store.put(record, load_image(self.image_path(record)))
            reused += 1
        logger.info("读取已有存储 {}: 复用 {} / {} 条记录", self.root, reused, n * m)
        return store

    def attach(self, store: SyntheticStore) -> None:
        """绑定正在生成的存储，on_record 写出的记录会周期性落盘清单"""
        self._store = store
        self._unsaved = 0

    def on_record(self, record: StoreRecord, image: Optional[torch.Tensor]) -> None:
        if image is not None:
            save_image(self.image_path(record), image)
        self._unsaved += 1
        if self._store is not None and self._unsaved >= self.flush_every:
            self.flush()

    def flush(self) -> Path:
        if self._store is None:
            raise ParameterException("没有绑定存储")
        self._unsaved = 0
        return self.save(MANIFEST_NAME, self._store.manifest())

    def save_store(self, store: SyntheticStore) -> Path:
        """写出全部图像与清单"""
        for record in store.records():
            if store.has(record.i, record.j):
                save_image(self.image_path(record), store.image(record.i, record.j))
        return self.save(MANIFEST_NAME, store.manifest())

    def read_store(self) -> SyntheticStore:
        """读取完整存储；清单缺失时报参数错误"""
        manifest = self.get(MANIFEST_NAME)
        if manifest is None:
            raise ParameterException(f"存储清单不存在: {self.path(MANIFEST_NAME)}")
        return self.load(manifest.n, manifest.m, manifest.policy)
