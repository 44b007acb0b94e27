"""
图像编解码与数据集目录

PNG 8 位；三通道存 RGB，单通道存灰度。
数据集目录布局: <root>/<class_id>/<image_id>.png，可选前景掩码 <image_id>.mask.png
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch
from loguru import logger
from PIL import Image, UnidentifiedImageError

from dafkit.augment import DatasetRecord, object_mask
from dafkit.core.exceptions import ParameterException
from dafkit.diffusion import from_pixels, to_pixels

from .base import atomic_write_bytes

MASK_SUFFIX = ".mask.png"


def encode_png(image: torch.Tensor) -> bytes:
    """(C, H, W) 浮点图像 -> PNG 字节"""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ParameterException(f"图像必须为 (1|3, H, W): {tuple(image.shape)}")
    pixels = to_pixels(image).permute(1, 2, 0).numpy()
    if pixels.shape[2] == 1:
        pil = Image.fromarray(pixels[:, :, 0])
    else:
        pil = Image.fromarray(pixels)
    buffer = io.BytesIO()
    pil.save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(path: Path | str, image: torch.Tensor) -> Path:
    return atomic_write_bytes(path, encode_png(image))


def load_image(path: Path | str) -> torch.Tensor:
    """PNG -> (C, H, W) float64，取值 [-1, 1]"""
    try:
        with Image.open(path) as pil:
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("RGB")
            pixels = np.asarray(pil, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise ParameterException(f"无法解码图像: {path}") from e
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return from_pixels(torch.from_numpy(pixels.copy()).permute(2, 0, 1))


def save_mask(path: Path | str, mask: torch.Tensor) -> Path:
    pixels = ((mask > 0.5).to(torch.uint8) * 255).numpy()
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return atomic_write_bytes(path, buffer.getvalue())


def load_mask(path: Path | str) -> torch.Tensor:
    """灰度 PNG -> (H, W) {0, 1} float64"""
    try:
        with Image.open(path) as pil:
            pixels = np.asarray(pil.convert("L"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise ParameterException(f"无法解码掩码: {path}") from e
    return torch.from_numpy((pixels >= 128).astype(np.float64))


def read_dataset_dir(root: Path | str) -> List[DatasetRecord]:
    """读取数据集目录；类别目录名必须为整数，记录按 (类别, 文件名) 排序"""
    root = Path(root)
    if not root.is_dir():
        raise ParameterException(f"数据集目录不存在: {root}")
    records: List[DatasetRecord] = []
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    for class_dir in class_dirs:
        try:
            class_id = int(class_dir.name)
        except ValueError:
            raise ParameterException(f"类别目录名必须是整数: {class_dir}") from None
        for path in sorted(class_dir.glob("*.png")):
            if path.name.endswith(MASK_SUFFIX):
                continue
            image_id = path.stem
            mask_path = class_dir / f"{image_id}{MASK_SUFFIX}"
            masks = [(class_id, load_mask(mask_path))] if mask_path.exists() else []
            records.append(
                DatasetRecord(
                    index=len(records),
                    image=load_image(path),
                    label=class_id,
                    image_id=image_id,
                    masks=masks,
                    source=str(path),
                )
            )
    if not records:
        raise ParameterException(f"数据集目录为空: {root}")
    logger.info("读取数据集 {}: {} 张图像, {} 个类别", root, len(records), len(class_dirs))
    return records


def write_dataset_dir(root: Path | str, records: Sequence[DatasetRecord]) -> List[Path]:
    """写出数据集目录；有掩码的记录同时写出其类别的前景掩码"""
    root = Path(root)
    written: List[Path] = []
    for record in records:
        class_dir = root / str(record.label)
        written.append(save_image(class_dir / f"{record.image_id}.png", record.image))
        if record.has_masks:
            written.append(save_mask(class_dir / f"{record.image_id}{MASK_SUFFIX}", object_mask(record)))
    return written
