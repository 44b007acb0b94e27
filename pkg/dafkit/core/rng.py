"""
随机数流模块

RngStream 是按值派生的随机数流：相同 (seed, stream id) 产生完全相同的采样序列，
不同 stream id 之间统计独立。流 id 为 (用途标签, 图像索引 i, 增强索引 j, 时间步 t)。
"""
from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import torch

_MASK_63 = (1 << 63) - 1


@dataclass(frozen=True)
class RngStream:
    """可复现的随机数流"""
    seed: int
    tag: str = "root"
    i: int = -1
    j: int = -1
    t: int = -1

    def __post_init__(self):
        if not 0 <= self.seed < (1 << 64):
            raise ValueError(f"seed 必须是 64 位无符号整数: {self.seed}")

    @property
    def stream_id(self) -> tuple[str, int, int, int]:
        return (self.tag, self.i, self.j, self.t)

    def child(
        self,
        tag: Optional[str] = None,
        i: Optional[int] = None,
        j: Optional[int] = None,
        t: Optional[int] = None,
    ) -> "RngStream":
        """派生子流；未给出的字段沿用当前值，标签按路径拼接"""
        return replace(
            self,
            tag=self.tag if tag is None else f"{self.tag}/{tag}",
            i=self.i if i is None else i,
            j=self.j if j is None else j,
            t=self.t if t is None else t,
        )

    def fork(self, n: int) -> list["RngStream"]:
        """为批次中的 n 个样本各派生一个子流；n == 1 时返回自身"""
        if n == 1:
            return [self]
        return [self.child(tag=f"item{b}") for b in range(n)]

    def derived_seed(self) -> int:
        """由 (seed, stream id) 经 BLAKE2b 摘要得到的 63 位种子"""
        payload = f"{self.seed}|{self.tag}|{self.i}|{self.j}|{self.t}".encode("utf-8")
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        return int.from_bytes(digest, "little") & _MASK_63

    def generator(self) -> torch.Generator:
        """返回新播种的 CPU torch.Generator"""
        gen = torch.Generator(device="cpu")
        gen.manual_seed(self.derived_seed())
        return gen

    def randn(self, *shape: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        """从本流抽取标准高斯样本"""
        return torch.randn(*shape, generator=self.generator(), dtype=dtype)


def as_streams(rng: RngStream | Sequence[RngStream], n: int) -> list[RngStream]:
    """把单个流或流序列规范为长度 n 的列表"""
    if isinstance(rng, RngStream):
        return rng.fork(n)
    streams = list(rng)
    if len(streams) != n:
        raise ValueError(f"随机数流数量 {len(streams)} 与批大小 {n} 不一致")
    return streams


def batch_randn(
    streams: Sequence[RngStream],
    shape: Sequence[int],
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """每个样本从自己的流抽取噪声，再堆叠为批"""
    return torch.stack([s.randn(*shape, dtype=dtype) for s in streams])


@contextmanager
def torch_seed(stream: RngStream) -> Iterator[None]:
    """在隔离的全局随机状态中用流种子初始化模块参数"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(stream.derived_seed())
        yield
