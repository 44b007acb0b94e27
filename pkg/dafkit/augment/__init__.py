"""
增强模块

堆叠策略、合成存储、真实/合成混合与掩码工具
"""
from .records import DatasetRecord
from .policy import build_dafusion_policy, identity_policy, real_guidance_policy, choose_augmentation
from .masks import dilate_mask, invert_mask, object_mask, preserve_mask_for, scaled_dilation_radius
from .transforms import flip, flip_augment, rotate_augment
from .store import GenerationContext, SyntheticStore, build_store, record_path
from .mixer import balanced_batch

__all__ = [
    "DatasetRecord",
    # Policy
    "build_dafusion_policy",
    "identity_policy",
    "real_guidance_policy",
    "choose_augmentation",
    # Masks
    "dilate_mask",
    "invert_mask",
    "object_mask",
    "preserve_mask_for",
    "scaled_dilation_radius",
    # Transforms
    "flip",
    "flip_augment",
    "rotate_augment",
    # Store
    "GenerationContext",
    "SyntheticStore",
    "build_store",
    "record_path",
    # Mixer
    "balanced_batch",
]
