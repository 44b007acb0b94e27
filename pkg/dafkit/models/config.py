"""
实验配置模型模块

ConfigDoc 对应 TOML/JSON 配置文档，[table1] 一节为全规模参考超参数（名称与取值保持一致），
其余各节为桌面规模复现所需的参数。
"""
import hashlib
import json
from typing import List, Literal, Optional, Tuple

from pydantic import Field, field_validator, model_validator

from .base import DafkitModel, StrictSection


# ==================== 训练/采样/混合配置 ====================

class TrainConfig(DafkitModel):
    """一阶自适应矩估计优化器的训练配置"""
    learning_rate: float = Field(..., gt=0, description="学习率")
    batch_size: int = Field(..., ge=1, description="批大小")
    steps: int = Field(..., ge=0, description="梯度步数")
    seed: int = Field(0, ge=0, description="随机种子")
    betas: Tuple[float, float] = Field((0.9, 0.999), description="Adam 矩衰减")
    eps: float = Field(1e-8, gt=0, description="Adam epsilon")
    log_every: int = Field(250, ge=0, description="日志间隔（步）")


class SamplerConfig(DafkitModel):
    """反向采样配置"""
    steps: int = Field(50, ge=1, description="反向步数 S")
    guidance_scale: float = Field(7.5, description="无分类器引导系数 s")
    final_noise: bool = Field(False, description="生成 x0 时是否加噪")
    batch_size: int = Field(16, ge=1, description="批量生成时每块的样本数")

    @field_validator("guidance_scale")
    @classmethod
    def check_scale(cls, v: float) -> float:
        if v != v or v in (float("inf"), float("-inf")) or v < 0:
            raise ValueError("guidance_scale 必须是有限的非负实数")
        return v


class MixerConfig(DafkitModel):
    """真实/合成图像混合配置"""
    alpha: float = Field(0.5, ge=0, le=1, description="合成图像概率 α")
    batch_size: int = Field(32, ge=1, description="批大小")


class ProbeConfig(DafkitModel):
    """线性探针训练配置"""
    learning_rate: float = Field(1e-4, gt=0, description="学习率")
    steps: int = Field(10000, ge=0, description="训练步数")
    eval_interval: int = Field(200, ge=1, description="验证间隔（步）")
    seed: int = Field(0, ge=0, description="随机种子")
    betas: Tuple[float, float] = Field((0.9, 0.999), description="Adam 矩衰减")
    eps: float = Field(1e-8, gt=0, description="Adam epsilon")


# ==================== 配置文档分节 ====================

class Table1Section(StrictSection):
    """全规模参考超参数"""
    synthetic_probability: float = Field(0.5, ge=0, le=1)
    stacked_augmentations: int = Field(4, ge=1)
    activation_probabilities: Optional[List[float]] = Field(None, description="为空表示 1/k")
    synthetic_images_per_real: int = Field(10, ge=1)
    synthetic_images_per_real_spurge: int = Field(50, ge=1)
    textual_inversion_token_initialization: Literal["null", "random"] = "null"
    textual_inversion_batch_size: int = Field(4, ge=1)
    textual_inversion_learning_rate: float = Field(0.0005, gt=0)
    textual_inversion_training_steps: int = Field(1000, ge=0)
    real_guidance_strength: float = Field(0.5, ge=0, le=1)
    guidance_scale: float = Field(7.5, ge=0)
    resolution: int = Field(512, ge=1)
    denoising_steps: int = Field(1000, ge=1)
    classifier_learning_rate: float = Field(0.0001, gt=0)
    classifier_batch_size: int = Field(32, ge=1)
    classifier_training_steps: int = Field(10000, ge=0)
    classifier_early_stopping_interval: int = Field(200, ge=1)

    @model_validator(mode="after")
    def check_probabilities(self):
        if self.activation_probabilities is not None:
            probs = self.activation_probabilities
            if len(probs) != self.stacked_augmentations:
                raise ValueError("activation_probabilities 长度必须等于 stacked_augmentations")
            if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError("activation_probabilities 必须在 [0,1] 内且和为 1")
        return self


class ScheduleSection(StrictSection):
    """噪声调度"""
    timesteps: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)


class ModelSection(StrictSection):
    """噪声预测网络结构"""
    channels: List[int] = Field(default_factory=lambda: [32, 64, 64])
    cond_dim: int = Field(16, ge=1)
    time_dim: int = Field(64, ge=2)
    groups: int = Field(8, ge=1)
    uncond_prob: float = Field(0.1, ge=0, le=1, description="训练时替换为空概念的概率")

    @field_validator("channels")
    @classmethod
    def check_channels(cls, v: List[int]) -> List[int]:
        if not v or any(c < 1 for c in v):
            raise ValueError("channels 不能为空且必须为正")
        return v


class TrainSection(StrictSection):
    """骨干网络预训练"""
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    steps: int = Field(5000, ge=0)
    held_out_size: int = Field(32, ge=1)
    log_every: int = Field(250, ge=0)


class SamplerSection(StrictSection):
    """桌面规模采样覆盖项；steps 为空时使用 table1.denoising_steps"""
    steps: Optional[int] = Field(50, ge=1)
    final_noise: bool = False
    batch_size: int = Field(16, ge=1)


class DatasetSection(StrictSection):
    """评估数据集"""
    preset: str = "shapes4"
    extra_presets: List[str] = Field(default_factory=list, description="额外的评估数据集预设")
    images_per_class: int = Field(100, ge=1)
    resolution: int = Field(32, ge=4)
    seed: int = Field(0, ge=0)


class PretrainSection(StrictSection):
    """骨干网络与特征提取器的预训练数据"""
    backbone_preset: str = "pretrain_backbone"
    backbone_images_per_class: int = Field(200, ge=1)
    extractor_preset: str = "pretrain_extractor"
    extractor_images_per_class: int = Field(200, ge=1)
    extractor_steps: int = Field(1500, ge=0)
    extractor_learning_rate: float = Field(1e-3, gt=0)
    extractor_batch_size: int = Field(64, ge=1)
    feature_dim: int = Field(64, ge=1)


class FewshotSection(StrictSection):
    """小样本实验协议"""
    q_grid: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    trials: int = Field(8, ge=1)
    methods: List[str] = Field(default_factory=lambda: ["baseline", "real-guidance", "dafusion:k=4"])
    probe_steps: Optional[int] = Field(2000, ge=0, description="为空时使用 table1.classifier_training_steps")
    inversion_steps: Optional[int] = Field(None, ge=0, description="为空时使用 table1.textual_inversion_training_steps")
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    granularity: Literal["pooled", "specific"] = "pooled"
    mask_dilation: int = Field(16, ge=0, description="参考分辨率 table1.resolution 下的膨胀像素")
    flip_modes: List[Literal["horizontal", "vertical"]] = Field(default_factory=lambda: ["horizontal"])
    flip_probability: float = Field(0.5, ge=0, le=1)
    include_flips_in_policy: bool = False
    no_stack_t0: float = Field(0.5, ge=0, le=1, description="k=1 消融使用的 t0")
    reference_method: str = "baseline"
    spurge_analog: bool = Field(False, description="使用 spurge 对照：M 取 spurge 值并加竖直翻转")

    @field_validator("q_grid")
    @classmethod
    def check_q_grid(cls, v: List[int]) -> List[int]:
        if len(v) < 1 or any(q < 1 for q in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("q_grid 必须严格递增且为正")
        return v


class RunSection(StrictSection):
    """运行参数"""
    seed: int = Field(0, ge=0, lt=2**64)
    workers: Optional[int] = Field(None, ge=1)


class ConfigDoc(StrictSection):
    """完整配置文档"""
    table1: Table1Section = Field(default_factory=Table1Section)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    pretrain: PretrainSection = Field(default_factory=PretrainSection)
    fewshot: FewshotSection = Field(default_factory=FewshotSection)
    run: RunSection = Field(default_factory=RunSection)

    def config_hash(self) -> str:
        """规范化 JSON 的 sha256，用于运行清单"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def backbone_train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.train.learning_rate,
            batch_size=self.train.batch_size,
            steps=self.train.steps,
            seed=self.run.seed,
            log_every=self.train.log_every,
        )

    def inversion_train_config(self, seed: Optional[int] = None) -> TrainConfig:
        steps = self.fewshot.inversion_steps
        return TrainConfig(
            learning_rate=self.table1.textual_inversion_learning_rate,
            batch_size=self.table1.textual_inversion_batch_size,
            steps=self.table1.textual_inversion_training_steps if steps is None else steps,
            seed=self.run.seed if seed is None else seed,
            log_every=0,
        )

    def sampler_config(self) -> SamplerConfig:
        steps = self.sampler.steps
        return SamplerConfig(
            steps=self.table1.denoising_steps if steps is None else steps,
            guidance_scale=self.table1.guidance_scale,
            final_noise=self.sampler.final_noise,
            batch_size=self.sampler.batch_size,
        )

    def mixer_config(self, alpha: Optional[float] = None) -> MixerConfig:
        return MixerConfig(
            alpha=self.table1.synthetic_probability if alpha is None else alpha,
            batch_size=self.table1.classifier_batch_size,
        )

    def probe_steps(self) -> int:
        steps = self.fewshot.probe_steps
        return self.table1.classifier_training_steps if steps is None else steps

    def probe_config(self, seed: Optional[int] = None) -> ProbeConfig:
        return ProbeConfig(
            learning_rate=self.table1.classifier_learning_rate,
            steps=self.probe_steps(),
            eval_interval=self.table1.classifier_early_stopping_interval,
            seed=self.run.seed if seed is None else seed,
        )

    def dataset_presets(self) -> List[str]:
        return [self.dataset.preset, *self.dataset.extra_presets]

    def images_per_real(self, spurge: Optional[bool] = None) -> int:
        if spurge is None:
            spurge = self.fewshot.spurge_analog
        if spurge:
            return self.table1.synthetic_images_per_real_spurge
        return self.table1.synthetic_images_per_real
