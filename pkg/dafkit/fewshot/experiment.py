"""
小样本实验编排

每个 (数据集, 方法, q, 试验) 单元：划分 → 在 q-shot 训练集上微调概念 → 生成合成存储 →
用混合批训练线性探针 → 记录最佳验证准确率。

公共随机数：划分与探针的随机数流只由 (主种子, q, 试验) 派生，所有方法看到相同的小样本集合；
生成流额外加入方法名。概念微调按 (数据集, q, 试验, 粒度) 共享。
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from loguru import logger

from dafkit.augment import (
    DatasetRecord,
    GenerationContext,
    SyntheticStore,
    balanced_batch,
    build_dafusion_policy,
    build_store,
    identity_policy,
    real_guidance_policy,
    scaled_dilation_radius,
)
from dafkit.core.exceptions import ParameterException, describe
from dafkit.core.progress_cache import progress_cache
from dafkit.core.rng import RngStream
from dafkit.diffusion import ConceptTable, NoisePredictor, NoiseSchedule, finetune_concepts
from dafkit.models import (
    AugmentationPolicy,
    CellResult,
    CellStatus,
    ConfigDoc,
    CurvePoint,
    ExperimentReport,
    FewShotSplit,
    Granularity,
    MaskMode,
    MethodKind,
    MethodSpec,
    MethodSummary,
    TransformKind,
)

from .metrics import auc_over_q, confidence_interval_68, intervals_overlap, normalize_scores
from .probe import FeatureExtractor, LinearProbe, flip_augmenter, train_probe
from .splits import make_split

TableKey = Tuple[str, int, int, Granularity]


@dataclass
class ExperimentResources:
    """实验共享的只读资源"""
    net: NoisePredictor
    table: ConceptTable
    schedule: NoiseSchedule
    extractor: FeatureExtractor
    datasets: Dict[str, List[DatasetRecord]]
    spurge: Dict[str, bool] = field(default_factory=dict)


def split_seed(seed: int, q: int, trial: int) -> int:
    return RngStream(seed, "split", i=q, j=trial).derived_seed()


def _granularity(method: MethodSpec, config: ConfigDoc) -> Granularity:
    return method.granularity or Granularity(config.fewshot.granularity)


def policy_for(method: MethodSpec, config: ConfigDoc) -> Tuple[Optional[AugmentationPolicy], bool]:
    """方法对应的增强策略与是否为 Real Guidance 模式"""
    fs = config.fewshot
    if method.kind == MethodKind.BASELINE:
        return None, False
    if method.identity:
        return identity_policy(), False
    if method.kind == MethodKind.REAL_GUIDANCE:
        t0 = method.t0 if method.t0 is not None else config.table1.real_guidance_strength
        return real_guidance_policy(t0), True

    k = method.effective_k
    t0 = method.t0
    if t0 is None and k == 1:
        t0 = fs.no_stack_t0
    extra = []
    if fs.include_flips_in_policy:
        extra = [TransformKind.HFLIP if m == "horizontal" else TransformKind.VFLIP for m in fs.flip_modes]
    probabilities = None
    if config.table1.activation_probabilities is not None and k == config.table1.stacked_augmentations and not extra:
        probabilities = config.table1.activation_probabilities
    base = TransformKind.SDEDIT_MASKED if method.kind == MethodKind.DAFUSION_MASKED else TransformKind.SDEDIT
    mask_mode = method.mask_mode if base == TransformKind.SDEDIT_MASKED else MaskMode.NONE
    return build_dafusion_policy(k, base, mask_mode=mask_mode, t0=t0, probabilities=probabilities, extra=extra), False


def alpha_for(method: MethodSpec, config: ConfigDoc) -> float:
    if method.alpha is not None:
        return method.alpha
    if method.kind == MethodKind.BASELINE:
        return 0.0
    return config.table1.synthetic_probability


def _class_images(train: Sequence[DatasetRecord]) -> Dict[int, List[Tuple[str, torch.Tensor]]]:
    groups: Dict[int, List[Tuple[str, torch.Tensor]]] = {}
    for record in train:
        groups.setdefault(record.label, []).append((record.image_id, record.image))
    return groups


class ExperimentRunner:
    """一次实验的全部单元"""

    def __init__(
        self,
        config: ConfigDoc,
        methods: Sequence[MethodSpec],
        resources: ExperimentResources,
        *,
        q_grid: Optional[Sequence[int]] = None,
        trials: Optional[int] = None,
        workers: int = 1,
    ):
        if not methods:
            raise ParameterException("至少需要一个方法")
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ParameterException(f"方法名重复: {names}")
        self.config = config
        self.methods = list(methods)
        self.resources = resources
        self.q_grid = list(q_grid or config.fewshot.q_grid)
        self.trials = trials or config.fewshot.trials
        self.workers = max(1, workers)
        self.seed = config.run.seed
        self.splits: Dict[Tuple[str, int, int], FewShotSplit] = {}
        self.tables: Dict[TableKey, ConceptTable] = {}
        self.table_errors: Dict[TableKey, str] = {}

    # ---------- 阶段 ----------

    def _make_splits(self) -> None:
        fs = self.config.fewshot
        for name, records in self.resources.datasets.items():
            for q in self.q_grid:
                for trial in range(self.trials):
                    self.splits[(name, q, trial)] = make_split(
                        records,
                        q,
                        split_seed(self.seed, q, trial),
                        validation_fraction=fs.validation_fraction,
                        pool_seed=self.config.dataset.seed,
                    )

    def _invert(self, key: TableKey) -> None:
        name, q, trial, granularity = key
        split = self.splits[(name, q, trial)]
        records = self.resources.datasets[name]
        train = [records[k] for k in split.train_indices]
        cfg = self.config.inversion_train_config(seed=RngStream(self.seed, "invert", i=q, j=trial).derived_seed())
        try:
            self.tables[key] = finetune_concepts(
                self.resources.net,
                self.resources.table,
                _class_images(train),
                self.resources.schedule,
                cfg,
                granularity=granularity,
                init=self.config.table1.textual_inversion_token_initialization,
            )
        except Exception as e:
            logger.warning("概念微调失败 {}: {}", key, e)
            self.table_errors[key] = describe(e)["message"]
        progress_cache.advance("inversion", current=f"{name} q={q} trial={trial}", log_every=1)

    def _run_inversions(self) -> None:
        keys = sorted({
            (name, q, trial, _granularity(m, self.config))
            for name in self.resources.datasets
            for m in self.methods if m.uses_concepts
            for q in self.q_grid
            for trial in range(self.trials)
        }, key=lambda k: (k[0], k[1], k[2], k[3].value))
        if not keys:
            return
        progress_cache.start("inversion", len(keys))
        self._map(self._invert, keys)
        progress_cache.remove("inversion")

    def _map(self, fn, items) -> list:
        if self.workers <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    # ---------- 单元 ----------

    def run_cell(self, cell: Tuple[str, MethodSpec, int, int]) -> CellResult:
        name, method, q, trial = cell
        split = self.splits[(name, q, trial)]
        base = CellResult(
            dataset=name,
            method=method.name,
            q=q,
            trial=trial,
            train_indices=split.train_indices,
            validation_size=len(split.validation_indices),
        )
        try:
            result = self._train_cell(name, method, q, trial, split, base)
        except Exception as e:
            logger.warning("实验单元失败 {} {} q={} trial={}: {}", name, method.name, q, trial, e)
            result = base.model_copy(update={"status": CellStatus.FAILED, "error": describe(e)["message"]})
        progress_cache.advance(
            "fewshot", ok=result.status == CellStatus.OK, current=f"{name}/{method.name} q={q} trial={trial}",
            log_every=max(1, self.trials),
        )
        return result

    def _train_cell(
        self,
        name: str,
        method: MethodSpec,
        q: int,
        trial: int,
        split: FewShotSplit,
        base: CellResult,
    ) -> CellResult:
        config = self.config
        records = self.resources.datasets[name]
        spurge = self.resources.spurge.get(name, config.fewshot.spurge_analog)
        train = [records[k] for k in split.train_indices]
        validation = [records[k] for k in split.validation_indices]

        table = self.resources.table
        if method.uses_concepts:
            key = (name, q, trial, _granularity(method, config))
            if key in self.table_errors:
                raise ParameterException(f"概念微调失败: {self.table_errors[key]}")
            table = self.tables[key]

        policy, real_guidance = policy_for(method, config)
        alpha = alpha_for(method, config)
        store: Optional[SyntheticStore] = None
        if policy is not None and alpha > 0:
            context = GenerationContext(
                net=self.resources.net,
                table=table,
                schedule=self.resources.schedule,
                sampler=config.sampler_config(),
                real_guidance=real_guidance,
                mask_radius=scaled_dilation_radius(
                    config.fewshot.mask_dilation, config.table1.resolution, config.dataset.resolution
                ),
            )
            store = build_store(
                train,
                policy,
                config.images_per_real(spurge),
                context,
                RngStream(self.seed, f"generate/{method.name}/{name}", i=q, j=trial),
                task_id=f"store/{name}/{method.name}/{q}/{trial}",
            )
            if not store.is_complete:
                raise ParameterException(f"合成存储不完整: {len(store.failed_records())} 条记录失败")

        train_ids = {r.image_id for r in train}
        integrity = not set(split.train_indices) & set(split.validation_indices)
        if store is not None:
            integrity = integrity and all(r.image_id in train_ids for r in store.records())

        probe_stream = RngStream(self.seed, f"probe/{name}", i=q, j=trial)
        mix = config.mixer_config(alpha)

        def batches(step: int):
            return balanced_batch(train, store, mix, probe_stream.child(tag="batch", t=step))

        modes = list(config.fewshot.flip_modes)
        if spurge and "vertical" not in modes:
            modes.append("vertical")
        num_classes = max(r.label for r in records) + 1
        val_images = torch.stack([r.image for r in validation])
        val_labels = torch.tensor([r.label for r in validation], dtype=torch.long)
        result = train_probe(
            LinearProbe(self.resources.extractor, num_classes),
            batches,
            (val_images, val_labels),
            config.probe_config(seed=probe_stream.derived_seed()),
            augment=flip_augmenter(modes, config.fewshot.flip_probability) if modes else None,
        )
        return base.model_copy(update={
            "accuracy": result.best_accuracy,
            "steps_to_best": result.best_step,
            "synthetic_records": len(store) if store is not None else 0,
            "integrity_ok": integrity,
        })

    # ---------- 入口 ----------

    def run(self) -> ExperimentReport:
        datasets = list(self.resources.datasets)
        logger.info(
            "开始小样本实验: 数据集={} 方法={} q={} trials={} workers={}",
            datasets, [m.name for m in self.methods], self.q_grid, self.trials, self.workers,
        )
        self._make_splits()
        self._run_inversions()

        cells = [
            (name, method, q, trial)
            for name in datasets
            for method in self.methods
            for q in self.q_grid
            for trial in range(self.trials)
        ]
        progress_cache.start("fewshot", len(cells))
        results = self._map(self.run_cell, cells)
        progress_cache.remove("fewshot")

        report = ExperimentReport(
            seed=self.seed,
            datasets=datasets,
            methods=[m.name for m in self.methods],
            q_grid=self.q_grid,
            trials=self.trials,
            reference_method=self._reference_name(),
            cells=results,
        )
        return summarize(report, self.methods)

    def _reference_name(self) -> Optional[str]:
        wanted = self.config.fewshot.reference_method
        names = [m.name for m in self.methods]
        return wanted if wanted in names else None


def run_experiment(
    methods: Sequence[MethodSpec],
    q_grid: Sequence[int],
    trials: int,
    config: ConfigDoc,
    resources: ExperimentResources,
    *,
    workers: int = 1,
) -> ExperimentReport:
    """运行全部 (数据集, 方法, q, 试验) 单元并汇总"""
    runner = ExperimentRunner(config, methods, resources, q_grid=q_grid, trials=trials, workers=workers)
    return runner.run()


# ==================== 汇总 ====================

def _interval(samples: Sequence[float]) -> Tuple[float, float, float]:
    if len(samples) == 1:
        return samples[0], samples[0], samples[0]
    return confidence_interval_68(samples)


def _accuracies(report: ExperimentReport, dataset: str, method: str) -> Dict[int, Dict[int, float]]:
    table: Dict[int, Dict[int, float]] = {}
    for c in report.cells:
        if c.dataset == dataset and c.method == method and c.status == CellStatus.OK and c.accuracy is not None:
            table.setdefault(c.trial, {})[c.q] = c.accuracy
    return table


def _trial_aucs(acc: Dict[int, Dict[int, float]], q_grid: Sequence[int]) -> Dict[int, float]:
    if len(q_grid) < 2:
        return {}
    return {
        trial: auc_over_q([(q, by_q[q]) for q in q_grid])
        for trial, by_q in acc.items() if all(q in by_q for q in q_grid)
    }


def _curve(acc: Dict[int, Dict[int, float]], q_grid: Sequence[int]) -> List[CurvePoint]:
    points = []
    for q in q_grid:
        samples = [by_q[q] for _, by_q in sorted(acc.items()) if q in by_q]
        if samples:
            mean, low, high = _interval(samples)
            points.append(CurvePoint(q=q, mean=mean, ci_low=low, ci_high=high, trials=len(samples)))
    return points


def _gain_curve(
    acc: Dict[int, Dict[int, float]],
    ref: Dict[int, Dict[int, float]],
    q_grid: Sequence[int],
) -> List[CurvePoint]:
    points = []
    for q in q_grid:
        diffs = [acc[t][q] - ref[t][q] for t in sorted(acc) if t in ref and q in acc[t] and q in ref[t]]
        if diffs:
            mean, low, high = _interval(diffs)
            points.append(CurvePoint(q=q, mean=mean, ci_low=low, ci_high=high, trials=len(diffs)))
    return points


def summarize(report: ExperimentReport, methods: Sequence[MethodSpec]) -> ExperimentReport:
    """由单元结果计算曲线、AUC、相对参考方法的增益、归一化分数与退化检查"""
    summaries: List[MethodSummary] = []
    reference = report.reference_method
    for dataset in report.datasets:
        ref_acc = _accuracies(report, dataset, reference) if reference else {}
        ref_aucs = _trial_aucs(ref_acc, report.q_grid)
        for method in report.methods:
            acc = _accuracies(report, dataset, method)
            aucs = _trial_aucs(acc, report.q_grid)
            summary = MethodSummary(dataset=dataset, method=method, curve=_curve(acc, report.q_grid))
            if aucs:
                summary.auc, summary.auc_ci_low, summary.auc_ci_high = _interval([aucs[t] for t in sorted(aucs)])
            if reference and method != reference:
                summary.gain_vs_reference = _gain_curve(acc, ref_acc, report.q_grid)
                paired = [aucs[t] - ref_aucs[t] for t in sorted(aucs) if t in ref_aucs]
                if paired:
                    summary.auc_gain_vs_reference = sum(paired) / len(paired)
            summaries.append(summary)

    overall: Dict[str, List[float]] = {}
    for dataset in report.datasets:
        rows = [s for s in summaries if s.dataset == dataset and s.auc is not None]
        if len(rows) < 2:
            continue
        values = [s.auc for s in rows]
        lo, hi = min(values), max(values)
        if hi <= lo:
            logger.warning("数据集 {} 各方法 AUC 相同，跳过归一化", dataset)
            continue
        for s, norm in zip(rows, normalize_scores(values, lo, hi)):
            s.normalized_score = norm
            overall.setdefault(s.method, []).append(norm)

    report.summaries = summaries
    report.overall_scores = {m: sum(v) / len(v) for m, v in overall.items()}
    report.degeneracy_ok = _degeneracy(report, methods)
    report.integrity_ok = all(c.integrity_ok for c in report.cells)
    return report


def _degeneracy(report: ExperimentReport, methods: Sequence[MethodSpec]) -> Optional[bool]:
    """恒等策略且 α = 0 的方法与 baseline 的 AUC 区间应重叠"""
    degenerate = [m.name for m in methods if m.identity and m.alpha == 0]
    baselines = [m.name for m in methods if m.kind == MethodKind.BASELINE]
    if not degenerate or not baselines:
        return None
    index = {(s.dataset, s.method): s for s in report.summaries}
    for dataset in report.datasets:
        ref = index.get((dataset, baselines[0]))
        for name in degenerate:
            s = index.get((dataset, name))
            if ref is None or s is None or ref.auc is None or s.auc is None:
                return False
            if not intervals_overlap((s.auc, s.auc_ci_low, s.auc_ci_high), (ref.auc, ref.auc_ci_low, ref.auc_ci_high)):
                return False
    return True
