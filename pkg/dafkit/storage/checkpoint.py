"""
DAFKIT1 检查点容器

布局：
    8 字节魔数 b"DAFKIT1\\n"
    8 字节小端 uint64 头长度
    UTF-8 JSON 头（键排序，保证逐字节可复现）
    按头中顺序拼接的小端 float32 数据块

头包含张量清单 (name, shape, offset, nbytes) 与元数据（调度、网络结构、概念表、配置）。
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field, NonNegativeInt, ValidationError

from dafkit.core.exceptions import CheckpointException
from dafkit.diffusion import ConceptTable, EpsilonNet, NoiseSchedule
from dafkit.fewshot.probe import FeatureExtractor
from dafkit.models import ConfigDoc, Granularity

from .base import atomic_write_bytes

MAGIC = b"DAFKIT1\n"
VERSION = 1


class TensorEntry(BaseModel):
    """头中的单个张量条目"""
    name: str
    shape: List[NonNegativeInt]
    offset: NonNegativeInt
    nbytes: NonNegativeInt


class ContainerHeader(BaseModel):
    version: int
    tensors: List[TensorEntry] = Field(default_factory=list)
    meta: Dict[str, Any] = Field(default_factory=dict)


def encode_container(tensors: Dict[str, torch.Tensor], meta: Dict[str, Any]) -> bytes:
    entries: List[Dict[str, Any]] = []
    blobs: List[bytes] = []
    offset = 0
    for name, tensor in tensors.items():
        data = tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"version": VERSION, "tensors": entries, "meta": meta},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def decode_container(data: bytes, source: str = "<bytes>") -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointException(f"不是 DAFKIT1 检查点: {source}")
    (header_len,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + header_len > len(data):
        raise CheckpointException(f"检查点头被截断: {source}")
    try:
        raw = json.loads(data[start: start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointException(f"检查点头无法解析: {source}") from e
    try:
        header = ContainerHeader.model_validate(raw)
    except ValidationError as e:
        raise CheckpointException(f"检查点头结构不合法 ({e.error_count()} 处): {source}") from e
    if header.version != VERSION:
        raise CheckpointException(f"不支持的检查点版本 {header.version}: {source}")

    body = data[start + header_len:]
    tensors: Dict[str, torch.Tensor] = {}
    for entry in header.tensors:
        count = int(np.prod(entry.shape)) if entry.shape else 1
        if entry.nbytes != 4 * count or entry.offset + entry.nbytes > len(body):
            raise CheckpointException(f"张量 {entry.name} 数据不完整: {source}")
        array = np.frombuffer(body, dtype="<f4", count=count, offset=entry.offset).reshape(entry.shape)
        tensors[entry.name] = torch.from_numpy(array.astype(np.float32))
    return tensors, header.meta


def save_container(path: Path | str, tensors: Dict[str, torch.Tensor], meta: Dict[str, Any]) -> Path:
    return atomic_write_bytes(path, encode_container(tensors, meta))


def load_container(path: Path | str) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointException(f"检查点不存在: {path}")
    return decode_container(path.read_bytes(), str(path))


def theta_hash(net: torch.nn.Module) -> str:
    """网络参数的 sha256（float32 字节，按参数名排序）"""
    digest = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    return digest.hexdigest()


# ==================== 骨干检查点 ====================

@dataclass
class BackboneCheckpoint:
    """骨干检查点内容"""
    net: EpsilonNet
    table: ConceptTable
    schedule: NoiseSchedule
    config: ConfigDoc
    meta: Dict[str, Any] = field(default_factory=dict)


def _table_meta(table: ConceptTable) -> Dict[str, Any]:
    return {
        "dim": table.dim,
        "granularity": table.granularity.value,
        "entries": [
            {"id": cid, "trainable": e.trainable, "class_id": e.class_id, "image_id": e.image_id}
            for cid, e in table.items()
        ],
    }


def save_backbone(
    path: Path | str,
    net: EpsilonNet,
    table: ConceptTable,
    schedule: NoiseSchedule,
    config: ConfigDoc,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    tensors = {f"net/{name}": t for name, t in net.state_dict().items()}
    tensors.update({f"concept/{cid}": e.vector for cid, e in table.items()})
    meta = {
        "kind": "backbone",
        "model": net.hparams(),
        "schedule": schedule.to_params(),
        "concepts": _table_meta(table),
        "config": config.model_dump(mode="json"),
        "theta_hash": theta_hash(net),
        "extra": extra or {},
    }
    return save_container(path, tensors, meta)


def load_backbone(path: Path | str) -> BackboneCheckpoint:
    tensors, meta = load_container(path)
    if meta.get("kind") != "backbone":
        raise CheckpointException(f"不是骨干检查点: {path}")
    try:
        net = EpsilonNet(**meta["model"])
        state = {name[len("net/"):]: t for name, t in tensors.items() if name.startswith("net/")}
        net.load_state_dict(state, strict=True)
        net.requires_grad_(False)
        net.eval()

        concepts = meta["concepts"]
        table = ConceptTable(concepts["dim"], Granularity(concepts["granularity"]))
        for entry in concepts["entries"]:
            table.add(
                entry["id"],
                tensors[f"concept/{entry['id']}"],
                trainable=entry["trainable"],
                class_id=entry["class_id"],
                image_id=entry["image_id"],
            )
        schedule = NoiseSchedule.from_betas(torch.tensor(meta["schedule"]["betas"], dtype=torch.float64))
        config = ConfigDoc.model_validate(meta["config"])
    except (KeyError, RuntimeError, ValueError, TypeError) as e:
        raise CheckpointException(f"检查点内容不完整: {path}: {e}") from e
    if theta_hash(net) != meta.get("theta_hash"):
        raise CheckpointException(f"检查点参数哈希不一致: {path}")
    return BackboneCheckpoint(net, table, schedule, config, meta.get("extra", {}))


# ==================== 特征提取器检查点 ====================

def save_extractor(path: Path | str, extractor: FeatureExtractor, config: ConfigDoc) -> Path:
    tensors = {f"extractor/{name}": t for name, t in extractor.state_dict().items()}
    meta = {"kind": "extractor", "model": extractor.hparams(), "config_hash": config.config_hash()}
    return save_container(path, tensors, meta)


def load_extractor(path: Path | str) -> FeatureExtractor:
    tensors, meta = load_container(path)
    if meta.get("kind") != "extractor":
        raise CheckpointException(f"不是特征提取器检查点: {path}")
    try:
        extractor = FeatureExtractor(**meta["model"])
        state = {name[len("extractor/"):]: t for name, t in tensors.items() if name.startswith("extractor/")}
        extractor.load_state_dict(state, strict=True)
    except (KeyError, RuntimeError, TypeError) as e:
        raise CheckpointException(f"特征提取器检查点不完整: {path}: {e}") from e
    return extractor.freeze()
