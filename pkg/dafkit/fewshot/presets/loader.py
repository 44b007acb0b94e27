# -*- coding: utf-8 -*-
"""
数据集预设加载器模块。

提供 YAML 格式玩具数据集预设的加载、缓存和 ToyDatasetSpec 构建。
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from loguru import logger

from dafkit.core.exceptions import ConfigException
from dafkit.models import ToyDatasetSpec

DEFAULT_FILE = "toy_datasets"


class PresetLoader:
    """
    预设配置加载器。

    支持：
    - YAML 配置文件加载与缓存
    - 点号分隔的嵌套键
    - defaults 与单个预设的合并
    """

    def __init__(self, base_path: Path | str | None = None):
        if base_path is None:
            base_path = Path(__file__).parent
        self.base_path = Path(base_path)
        self._cache: Dict[str, Dict[str, Any]] = {}

    def load(self, name: str = DEFAULT_FILE) -> Dict[str, Any]:
        """
        加载指定名称的 YAML 配置。

        Raises:
            ConfigException: 文件不存在或解析失败
        """
        if name in self._cache:
            return self._cache[name]

        file_path = self.base_path / f"{name}.yaml"
        if not file_path.exists():
            raise ConfigException(f"预设文件不存在: {file_path}")

        try:
            with open(file_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.error("解析 YAML 失败 {}: {}", file_path, e)
            raise ConfigException(f"预设文件解析失败: {file_path}") from e
        self._cache[name] = data
        return data

    def get_config(self, key: str | None = None, name: str = DEFAULT_FILE) -> Any:
        """获取配置值，key 支持点号分隔的嵌套键"""
        data = self.load(name)
        if key is None:
            return data

        value = data
        for part in key.split("."):
            if not isinstance(value, dict) or part not in value:
                raise ConfigException(f"配置键不存在: {name}.{key}")
            value = value[part]
        return value

    def preset_names(self, name: str = DEFAULT_FILE) -> List[str]:
        return list(self.get_config("presets", name))

    def preset(self, preset: str, name: str = DEFAULT_FILE) -> Dict[str, Any]:
        """defaults 合并预设后的原始字典"""
        presets = self.get_config("presets", name)
        if preset not in presets:
            raise ConfigException(f"未知数据集预设: {preset}，可用: {', '.join(presets)}")
        merged = dict(self.load(name).get("defaults") or {})
        merged.update(presets[preset])
        return merged

    def is_spurge(self, preset: str) -> bool:
        return bool(self.preset(preset).get("spurge", False))

    def toy_spec(
        self,
        preset: str,
        *,
        images_per_class: Optional[int] = None,
        resolution: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> ToyDatasetSpec:
        """按预设构建 ToyDatasetSpec，显式参数覆盖预设"""
        data = self.preset(preset)
        data.pop("description", None)
        data.pop("spurge", None)
        overrides = {"images_per_class": images_per_class, "resolution": resolution, "seed": seed}
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return ToyDatasetSpec.model_validate(data)
        except ValueError as e:
            raise ConfigException(f"数据集预设 {preset} 不合法: {e}") from e

    def clear_cache(self) -> None:
        """清除缓存。"""
        self._cache.clear()
        logger.debug("预设缓存已清除")


# ========== 全局单例和便捷函数 ==========

_loader: PresetLoader | None = None


def get_preset_loader() -> PresetLoader:
    """获取全局 PresetLoader 单例。"""
    global _loader
    if _loader is None:
        _loader = PresetLoader()
    return _loader


def get_toy_spec(preset: str, **overrides) -> ToyDatasetSpec:
    """
    便捷函数：按预设名构建数据集规格。

    Example:
        >>> spec = get_toy_spec("shapes4", images_per_class=100, resolution=32, seed=0)
    """
    return get_preset_loader().toy_spec(preset, **overrides)
