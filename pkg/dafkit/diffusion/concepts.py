"""
概念嵌入表

概念 id 约定：
    null                          类无关嵌入 w_null（无条件分支）
    pretrain/<name>               骨干预训练时的类别概念
    class/<class_id>              pooled 粒度，每类一个
    class/<class_id>/image/<id>   specific 粒度，每张训练图一个
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Literal, Optional, Sequence

import torch

from dafkit.core.exceptions import ConceptNotFoundException, ParameterException
from dafkit.core.rng import RngStream
from dafkit.models import Granularity

NULL_CONCEPT = "null"


def pretrain_concept_id(name: str) -> str:
    return f"pretrain/{name}"


def class_concept_id(class_id: int) -> str:
    return f"class/{class_id}"


def image_concept_id(class_id: int, image_id: str) -> str:
    return f"class/{class_id}/image/{image_id}"


@dataclass
class ConceptEntry:
    """单个概念嵌入"""
    vector: torch.Tensor
    trainable: bool = False
    class_id: Optional[int] = None
    image_id: Optional[str] = None


class ConceptTable:
    """概念 id -> 嵌入向量 w（长度 d）"""

    def __init__(self, dim: int, granularity: Granularity = Granularity.POOLED):
        if dim < 1:
            raise ParameterException(f"嵌入维度必须为正: {dim}")
        self.dim = dim
        self.granularity = granularity
        self._entries: Dict[str, ConceptEntry] = {}

    @classmethod
    def with_null(cls, dim: int, rng: Optional[RngStream] = None, scale: float = 0.1) -> "ConceptTable":
        """创建只含 null 概念的表"""
        table = cls(dim)
        vector = torch.zeros(dim) if rng is None else rng.randn(dim, dtype=torch.float32) * scale
        table.add(NULL_CONCEPT, vector, trainable=True)
        return table

    # ---------- 增删查 ----------

    def add(
        self,
        concept_id: str,
        vector: Optional[torch.Tensor] = None,
        *,
        trainable: bool = False,
        class_id: Optional[int] = None,
        image_id: Optional[str] = None,
        init: Literal["null", "random"] = "null",
        rng: Optional[RngStream] = None,
    ) -> ConceptEntry:
        """
        新增或覆盖一个概念

        vector 为空时按 init 初始化：null 复制 w_null，random 从 rng 抽取高斯向量（按 w_null 的范数缩放）
        """
        if vector is None:
            null = self.get(NULL_CONCEPT)
            if init == "random":
                if rng is None:
                    raise ParameterException("random 初始化需要随机数流")
                noise = rng.randn(self.dim, dtype=null.dtype)
                vector = noise / noise.norm() * max(float(null.norm()), 1e-3)
            else:
                vector = null.detach().clone()
        vector = vector.detach().reshape(-1).clone()
        if vector.numel() != self.dim:
            raise ParameterException(f"嵌入长度 {vector.numel()} 与维度 {self.dim} 不一致")
        entry = ConceptEntry(vector=vector, trainable=trainable, class_id=class_id, image_id=image_id)
        self._entries[concept_id] = entry
        return entry

    def entry(self, concept_id: str) -> ConceptEntry:
        try:
            return self._entries[concept_id]
        except KeyError:
            raise ConceptNotFoundException(concept_id) from None

    def get(self, concept_id: str) -> torch.Tensor:
        return self.entry(concept_id).vector

    def set(self, concept_id: str, vector: torch.Tensor) -> None:
        """替换已有概念的向量（训练循环中可放入叶张量以接收梯度）"""
        self.entry(concept_id).vector = vector

    def vectors(self, concept_ids: Sequence[str]) -> torch.Tensor:
        """按 id 堆叠为 (B, d)；保留对可训练向量的梯度连接"""
        return torch.stack([self.get(cid) for cid in concept_ids])

    def __contains__(self, concept_id: object) -> bool:
        return concept_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def ids(self) -> List[str]:
        return list(self._entries)

    def items(self) -> Iterable[tuple[str, ConceptEntry]]:
        return self._entries.items()

    # ---------- 类别视图 ----------

    def ids_for_class(self, class_id: int) -> List[str]:
        """某类别已有的微调概念 id（pooled 与 specific 均包括）"""
        return [cid for cid, e in self._entries.items() if e.class_id == class_id]

    def concept_for(self, class_id: int, image_id: Optional[str] = None) -> str:
        """按当前粒度解析一张图对应的概念 id"""
        if self.granularity == Granularity.SPECIFIC and image_id is not None:
            cid = image_concept_id(class_id, image_id)
        else:
            cid = class_concept_id(class_id)
        if cid not in self._entries:
            raise ConceptNotFoundException(cid)
        return cid

    def missing_classes(self, class_ids: Iterable[int]) -> List[int]:
        """没有任何微调概念的类别"""
        present = {e.class_id for e in self._entries.values() if e.class_id is not None}
        return sorted({c for c in class_ids if c not in present})

    # ---------- 复制/精度 ----------

    def copy(self, dtype: Optional[torch.dtype] = None) -> "ConceptTable":
        """深拷贝；可同时转换精度"""
        table = ConceptTable(self.dim, self.granularity)
        for cid, e in self._entries.items():
            vector = e.vector.detach().clone()
            if dtype is not None:
                vector = vector.to(dtype)
            table._entries[cid] = ConceptEntry(vector, e.trainable, e.class_id, e.image_id)
        return table

    def trainable_ids(self) -> List[str]:
        return [cid for cid, e in self._entries.items() if e.trainable]

    def freeze_all(self) -> None:
        for e in self._entries.values():
            e.trainable = False

    def equals(self, other: "ConceptTable") -> bool:
        """id、元数据与向量逐位相等"""
        if self.ids() != other.ids() or self.dim != other.dim:
            return False
        for cid, e in self._entries.items():
            o = other.entry(cid)
            if (e.trainable, e.class_id, e.image_id) != (o.trainable, o.class_id, o.image_id):
                return False
            if not torch.equal(e.vector, o.vector):
                return False
        return True
