"""
配置文档读写

TOML（tomllib 读取，tomli-w 写出）；.json 后缀按 JSON 读取。
"""
from __future__ import annotations

import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict

import tomli_w
from pydantic import ValidationError

from dafkit.core.exceptions import ConfigException
from dafkit.models import ConfigDoc

from .base import atomic_write_text


def parse_config(text: str, fmt: str = "toml", source: str = "<config>") -> ConfigDoc:
    try:
        data = json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigException(f"配置文件无法解析: {source}: {e}") from e
    try:
        return ConfigDoc.model_validate(data)
    except ValidationError as e:
        errors = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        raise ConfigException(f"配置不合法: {source}: {errors}", data={"errors": e.errors(include_url=False)}) from e


def load_config(path: Path | str) -> ConfigDoc:
    """读取配置；路径不存在或不可读时报配置错误"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigException(f"无法读取配置文件: {path}") from e
    return parse_config(text, "json" if path.suffix.lower() == ".json" else "toml", str(path))


def _resolved(config: ConfigDoc) -> Dict[str, Any]:
    """TOML 没有 null：把"为空表示取 table1 值"的字段展开成实际值，其余空值省略"""
    data = config.model_dump(mode="json")
    if data["sampler"]["steps"] is None:
        data["sampler"]["steps"] = config.table1.denoising_steps
    if data["fewshot"]["probe_steps"] is None:
        data["fewshot"]["probe_steps"] = config.table1.classifier_training_steps

    def strip(value):
        if isinstance(value, dict):
            return {k: strip(v) for k, v in value.items() if v is not None}
        return value

    return strip(data)


def dump_config(config: ConfigDoc) -> str:
    return tomli_w.dumps(_resolved(config))


def save_config(path: Path | str, config: ConfigDoc) -> Path:
    return atomic_write_text(path, dump_config(config))
