"""
扩散模块

噪声调度、ε_θ 网络、概念嵌入表、训练与采样
"""
from .schedule import (
    NoiseSchedule, make_linear_schedule, respace_schedule, forward_sample, splice_index,
    from_pixels, to_pixels,
)
from .denoiser import EpsilonNet, NoisePredictor, predict_noise
from .concepts import (
    NULL_CONCEPT, ConceptEntry, ConceptTable,
    pretrain_concept_id, class_concept_id, image_concept_id,
)
from .training import (
    loss_simple, held_out_loss, train_denoiser, finetune_concepts, gradient_check,
    dihedral_views, difference_numerator,
)
from .sampler import (
    SamplingChain, sampling_chain, reverse_step, guided_noise, generate, sdedit,
    inpaint_blend, sdedit_masked,
)

__all__ = [
    # Schedule
    "NoiseSchedule",
    "make_linear_schedule",
    "respace_schedule",
    "forward_sample",
    "splice_index",
    "from_pixels",
    "to_pixels",
    # Network
    "EpsilonNet",
    "NoisePredictor",
    "predict_noise",
    # Concepts
    "NULL_CONCEPT",
    "ConceptEntry",
    "ConceptTable",
    "pretrain_concept_id",
    "class_concept_id",
    "image_concept_id",
    # Training
    "loss_simple",
    "held_out_loss",
    "train_denoiser",
    "finetune_concepts",
    "gradient_check",
    "dihedral_views",
    "difference_numerator",
    # Sampling
    "SamplingChain",
    "sampling_chain",
    "reverse_step",
    "guided_noise",
    "generate",
    "sdedit",
    "inpaint_blend",
    "sdedit_masked",
]
