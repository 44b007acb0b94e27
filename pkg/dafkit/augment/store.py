"""
合成存储生成

对每张真实图像 i 生成 M 个增强 X̃_ij：每个 (i, j) 独立抽取策略条目，
同一条目的记录按采样批大小分块批量生成，分块在线程池中并行执行。
分块由全部 (i, j) 决定，与已完成的记录无关，因此续跑与一次跑完结果逐位相同。
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import torch
from loguru import logger

from dafkit.core.exceptions import ParameterException, describe
from dafkit.core.progress_cache import progress_cache
from dafkit.core.rng import RngStream
from dafkit.diffusion import (
    NULL_CONCEPT,
    ConceptTable,
    NoisePredictor,
    NoiseSchedule,
    from_pixels,
    sdedit,
    sdedit_masked,
    to_pixels,
)
from dafkit.models import (
    AugmentationPolicy,
    RecordStatus,
    SamplerConfig,
    StoreManifest,
    StoreRecord,
    TransformKind,
)

from .masks import preserve_mask_for
from .policy import choose_augmentation
from .records import DatasetRecord

Key = Tuple[int, int]
RecordCallback = Callable[[StoreRecord, Optional[torch.Tensor]], None]


def record_path(class_id: int, image_id: str, j: int) -> str:
    """存储中合成图像的相对路径"""
    return f"{class_id}/{image_id}/aug_{j}.png"


class SyntheticStore:
    """N × M 合成图像及其来源记录"""

    def __init__(self, n: int, m: int, policy: AugmentationPolicy):
        if m < 1:
            raise ParameterException(f"M 必须 >= 1: {m}")
        self.n = n
        self.m = m
        self.policy = policy
        self._records: Dict[Key, StoreRecord] = {}
        self._images: Dict[Key, torch.Tensor] = {}

    def put(self, record: StoreRecord, image: Optional[torch.Tensor] = None) -> None:
        key = (record.i, record.j)
        self._records[key] = record
        if image is not None:
            self._images[key] = image
        else:
            self._images.pop(key, None)

    def record(self, i: int, j: int) -> StoreRecord:
        return self._records[(i, j)]

    def image(self, i: int, j: int) -> torch.Tensor:
        return self._images[(i, j)]

    def has(self, i: int, j: int) -> bool:
        record = self._records.get((i, j))
        return record is not None and record.status == RecordStatus.OK and (i, j) in self._images

    def images_for(self, i: int) -> List[torch.Tensor]:
        return [self._images[(i, j)] for j in range(self.m) if self.has(i, j)]

    def records(self) -> List[StoreRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def available_keys(self) -> List[Key]:
        """可供混合抽样的 (i, j)，按序排列"""
        return [k for k in sorted(self._records) if self.has(*k)]

    def failed_records(self) -> List[StoreRecord]:
        return [r for r in self.records() if r.status == RecordStatus.FAILED]

    @property
    def is_complete(self) -> bool:
        return len(self._records) == self.n * self.m and all(
            r.status == RecordStatus.OK for r in self._records.values()
        )

    def __len__(self) -> int:
        return len(self._records)

    def manifest(self) -> StoreManifest:
        return StoreManifest(n=self.n, m=self.m, policy=self.policy, records=self.records())


@dataclass
class GenerationContext:
    """生成所需的模型与参数"""
    net: NoisePredictor
    table: ConceptTable
    schedule: NoiseSchedule
    sampler: SamplerConfig
    real_guidance: bool = False
    mask_radius: int = 1
    workers: int = 1
    log_every: int = 0

    def concept_for(self, record: DatasetRecord) -> str:
        """Real Guidance 固定使用 null；否则按表的粒度解析"""
        if self.real_guidance:
            return NULL_CONCEPT
        return self.table.concept_for(record.label, record.image_id)


@dataclass
class _Job:
    record: StoreRecord
    source: DatasetRecord
    stream: RngStream
    entry_index: int


@dataclass
class _ChunkResult:
    outputs: List[Tuple[StoreRecord, Optional[torch.Tensor]]] = field(default_factory=list)


def _plan(
    dataset: Sequence[DatasetRecord],
    policy: AugmentationPolicy,
    m: int,
    context: GenerationContext,
    rng: RngStream,
) -> List[_Job]:
    jobs = []
    for i, source in enumerate(dataset):
        for j in range(m):
            stream = rng.child(tag="store", i=i, j=j)
            index = choose_augmentation(policy, stream.child(tag="choose"))
            transform = policy.entries[index].transform
            concept = context.concept_for(source) if transform.is_generative else NULL_CONCEPT
            record = StoreRecord(
                i=i,
                j=j,
                class_id=source.label,
                image_id=source.image_id,
                entry_index=index,
                transform=transform.label(),
                t0=transform.t0,
                seed=stream.derived_seed(),
                concept_id=concept,
                path=record_path(source.label, source.image_id, j),
            )
            jobs.append(_Job(record=record, source=source, stream=stream.child(tag="sample"), entry_index=index))
    return jobs


def _chunks(jobs: Sequence[_Job], batch_size: int) -> List[List[_Job]]:
    by_entry: Dict[int, List[_Job]] = {}
    for job in jobs:
        by_entry.setdefault(job.entry_index, []).append(job)
    chunks = []
    for index in sorted(by_entry):
        group = by_entry[index]
        chunks.extend(group[k:k + batch_size] for k in range(0, len(group), batch_size))
    return chunks


def _quantize(x: torch.Tensor) -> torch.Tensor:
    """与 PNG 存储一致的 8 位量化"""
    return from_pixels(to_pixels(x))


def _apply(jobs: Sequence[_Job], policy: AugmentationPolicy, context: GenerationContext) -> torch.Tensor:
    transform = policy.entries[jobs[0].entry_index].transform
    x = torch.stack([job.source.image for job in jobs]).to(torch.float64)
    streams = [job.stream for job in jobs]
    concepts = [job.record.concept_id for job in jobs]

    if transform.kind == TransformKind.IDENTITY:
        out = x.clone()
    elif transform.kind == TransformKind.HFLIP:
        out = torch.flip(x, dims=(-1,))
    elif transform.kind == TransformKind.VFLIP:
        out = torch.flip(x, dims=(-2,))
    elif transform.kind == TransformKind.SDEDIT:
        out = sdedit(
            x, transform.t0, context.net, context.table, context.schedule, context.sampler, concepts, streams,
        )
    else:
        preserve = torch.stack(
            [preserve_mask_for(job.source, transform.mask_mode, context.mask_radius) for job in jobs]
        ).unsqueeze(1)
        out = sdedit_masked(
            x, preserve, transform.t0, context.net, context.table, context.schedule, context.sampler,
            concepts, streams,
        )
    return _quantize(out)


def _run_chunk(
    chunk: Sequence[_Job],
    pending: Iterable[Key],
    policy: AugmentationPolicy,
    context: GenerationContext,
) -> _ChunkResult:
    wanted = set(pending)
    result = _ChunkResult()
    try:
        images = _apply(chunk, policy, context)
        for job, image in zip(chunk, images):
            if (job.record.i, job.record.j) in wanted:
                result.outputs.append((job.record.model_copy(update={"status": RecordStatus.OK}), image))
        return result
    except Exception as e:
        if len(chunk) == 1:
            job = chunk[0]
            logger.warning("记录 ({}, {}) 生成失败: {}", job.record.i, job.record.j, e)
            failed = job.record.model_copy(update={"status": RecordStatus.FAILED, "error": describe(e)["message"]})
            result.outputs.append((failed, None))
            return result
    # 批失败后逐条重试，失败只记录到对应记录
    for job in chunk:
        if (job.record.i, job.record.j) in wanted:
            result.outputs.extend(_run_chunk([job], [(job.record.i, job.record.j)], policy, context).outputs)
    return result


def build_store(
    dataset: Sequence[DatasetRecord],
    policy: AugmentationPolicy,
    m: int,
    context: GenerationContext,
    rng: RngStream,
    *,
    existing: Optional[SyntheticStore] = None,
    on_record: Optional[RecordCallback] = None,
    task_id: str = "store",
) -> SyntheticStore:
    """
    生成 N × M 合成存储

    existing 中已成功的记录直接保留（续跑）；每个新记录生成后回调 on_record，
    供存储层写出 PNG 与清单。单条记录失败不会中断生成。
    """
    if m < 1:
        raise ParameterException(f"M 必须 >= 1: {m}")
    if policy.needs_masks:
        missing = [r.image_id for r in dataset if not r.has_masks]
        if missing:
            raise ParameterException(f"掩码策略需要前景掩码，缺失: {missing[:5]}")

    store = existing if existing is not None else SyntheticStore(len(dataset), m, policy)
    jobs = _plan(dataset, policy, m, context, rng)
    pending = [
        job for job in jobs
        if not (store.has(job.record.i, job.record.j) and store.record(job.record.i, job.record.j).seed == job.record.seed)
    ]
    pending_keys = {(job.record.i, job.record.j) for job in pending}
    chunks = [
        chunk for chunk in _chunks(jobs, context.sampler.batch_size)
        if any((job.record.i, job.record.j) in pending_keys for job in chunk)
    ]
    logger.info(
        "开始生成合成存储: N={} M={} 待生成={} 分块={} workers={}",
        len(dataset), m, len(pending), len(chunks), context.workers,
    )
    progress_cache.start(task_id, len(pending))

    def consume(result: _ChunkResult) -> None:
        for record, image in result.outputs:
            store.put(record, image)
            if on_record is not None:
                on_record(record, image)
            progress_cache.advance(
                task_id,
                ok=record.status == RecordStatus.OK,
                current=f"({record.i}, {record.j})",
                log_every=context.log_every,
            )

    if context.workers <= 1:
        for chunk in chunks:
            consume(_run_chunk(chunk, pending_keys, policy, context))
    else:
        with ThreadPoolExecutor(max_workers=context.workers) as pool:
            futures = [pool.submit(_run_chunk, chunk, pending_keys, policy, context) for chunk in chunks]
            for future in as_completed(futures):
                consume(future.result())

    progress_cache.remove(task_id)
    failed = store.failed_records()
    if failed:
        logger.warning("合成存储不完整: {} 条记录失败", len(failed))
    return store
