"""
存储模块

图像编解码、DAFKIT1 检查点、合成存储目录、实验报告与运行清单
"""
from .base import JsonRepository, atomic_write_bytes, atomic_write_text, file_sha1, git_blob_sha1
from .images import (
    encode_png, save_image, load_image, save_mask, load_mask, read_dataset_dir, write_dataset_dir,
)
from .checkpoint import (
    BackboneCheckpoint, encode_container, decode_container, save_container, load_container,
    save_backbone, load_backbone, save_extractor, load_extractor, theta_hash,
)
from .store import StoreRepository
from .report import ReportRepository, metrics_csv, summary_csv, render_curves
from .manifest import ManifestRecorder, verify_manifest, RUN_MANIFEST_NAME
from .config_file import parse_config, load_config, dump_config, save_config

__all__ = [
    # Base
    "JsonRepository",
    "atomic_write_bytes",
    "atomic_write_text",
    "file_sha1",
    "git_blob_sha1",
    # Images
    "encode_png",
    "save_image",
    "load_image",
    "save_mask",
    "load_mask",
    "read_dataset_dir",
    "write_dataset_dir",
    # Checkpoint
    "BackboneCheckpoint",
    "encode_container",
    "decode_container",
    "save_container",
    "load_container",
    "save_backbone",
    "load_backbone",
    "save_extractor",
    "load_extractor",
    "theta_hash",
    # Store / report / manifest
    "StoreRepository",
    "ReportRepository",
    "metrics_csv",
    "summary_csv",
    "render_curves",
    "ManifestRecorder",
    "verify_manifest",
    "RUN_MANIFEST_NAME",
    # Config
    "parse_config",
    "load_config",
    "dump_config",
    "save_config",
]
