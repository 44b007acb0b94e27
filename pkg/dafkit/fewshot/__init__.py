"""
小样本评估模块

玩具数据集、小样本划分、线性探针、指标与实验编排
"""
from .toy_data import gen_toy_dataset, label_from_masks, render_toy_image, shape_mask
from .splits import make_split
from .probe import FeatureExtractor, LinearProbe, ProbeResult, train_probe, train_extractor, flip_augmenter
from .metrics import auc_over_q, normalize_scores, confidence_interval_68, intervals_overlap
from .experiment import ExperimentResources, ExperimentRunner, run_experiment, summarize, policy_for, alpha_for
from .pipeline import (
    BackboneResult, build_schedule, build_net, train_backbone, build_extractor, eval_datasets,
)

__all__ = [
    # Toy data
    "gen_toy_dataset",
    "label_from_masks",
    "render_toy_image",
    "shape_mask",
    "make_split",
    # Probe
    "FeatureExtractor",
    "LinearProbe",
    "ProbeResult",
    "train_probe",
    "train_extractor",
    "flip_augmenter",
    # Metrics
    "auc_over_q",
    "normalize_scores",
    "confidence_interval_68",
    "intervals_overlap",
    # Experiment
    "ExperimentResources",
    "ExperimentRunner",
    "run_experiment",
    "summarize",
    "policy_for",
    "alpha_for",
    # Pipeline
    "BackboneResult",
    "build_schedule",
    "build_net",
    "train_backbone",
    "build_extractor",
    "eval_datasets",
]
