"""
掩码工具

掩码为 (H, W)、(1, H, W) 或 (B, 1, H, W) 的浮点张量，取值 [0, 1]。
"""
import torch
import torch.nn.functional as F

from dafkit.core.exceptions import ParameterException
from dafkit.models import MaskMode

from .records import DatasetRecord


def _is_binary(v: torch.Tensor) -> bool:
    return bool(((v == 0) | (v == 1)).all())


def dilate_mask(v: torch.Tensor, radius: int) -> torch.Tensor:
    """二值掩码膨胀：(2r+1)×(2r+1) 方形结构元"""
    if radius < 0:
        raise ParameterException(f"膨胀半径不能为负: {radius}")
    if not _is_binary(v):
        raise ParameterException("dilate_mask 只接受二值掩码")
    if radius == 0:
        return v.clone()
    shape = v.shape
    x = v.to(torch.float64).reshape(-1, 1, shape[-2], shape[-1])
    out = F.max_pool2d(x, kernel_size=2 * radius + 1, stride=1, padding=radius)
    return out.reshape(shape).to(v.dtype)


def invert_mask(v: torch.Tensor) -> torch.Tensor:
    """1 − v"""
    if float(v.min()) < 0.0 or float(v.max()) > 1.0:
        raise ParameterException("掩码取值必须在 [0, 1] 内")
    return 1.0 - v


def object_mask(record: DatasetRecord) -> torch.Tensor:
    """记录中属于其标签类别的掩码并集"""
    masks = [m for class_id, m in record.masks if class_id == record.label]
    if not masks:
        raise ParameterException(f"图像 {record.image_id} 没有类别 {record.label} 的掩码")
    return torch.stack([m.to(torch.float64) for m in masks]).amax(dim=0)


def preserve_mask_for(record: DatasetRecord, mode: MaskMode, radius: int) -> torch.Tensor:
    """
    掩码增强的保留掩码（v = 1 保留）

    foreground: 重绘物体，保留膨胀后物体掩码之外的背景
    background: 重绘背景，保留膨胀后的物体
    """
    if mode == MaskMode.NONE:
        return torch.zeros(record.image.shape[-2:], dtype=torch.float64)
    dilated = dilate_mask(object_mask(record), radius)
    if mode == MaskMode.FOREGROUND:
        return invert_mask(dilated)
    return dilated


def scaled_dilation_radius(radius: int, reference_resolution: int, resolution: int) -> int:
    """把参考分辨率下的膨胀像素换算到当前分辨率（四舍五入，至少 1）"""
    if radius <= 0:
        return 0
    return max(1, round(radius * resolution / reference_resolution))
