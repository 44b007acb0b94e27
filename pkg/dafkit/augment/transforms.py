"""
经典增强：翻转与旋转
"""
import math
from typing import Literal

import torch
import torch.nn.functional as F

from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream

FlipMode = Literal["horizontal", "vertical"]


def flip(image: torch.Tensor, mode: FlipMode) -> torch.Tensor:
    if mode == "horizontal":
        return torch.flip(image, dims=(-1,))
    if mode == "vertical":
        return torch.flip(image, dims=(-2,))
    raise ParameterException(f"未知翻转模式: {mode}")


def flip_augment(image: torch.Tensor, mode: FlipMode, probability: float, rng: RngStream) -> torch.Tensor:
    """以给定概率翻转"""
    if not 0.0 <= probability <= 1.0:
        raise ParameterException(f"probability 必须在 [0, 1] 内: {probability}")
    u = float(torch.rand(1, generator=rng.generator(), dtype=torch.float64))
    if u < probability:
        return flip(image, mode)
    return image


def rotate_augment(image: torch.Tensor, max_degrees: float, probability: float, rng: RngStream) -> torch.Tensor:
    """以给定概率旋转 [−max_degrees, max_degrees] 内的均匀随机角度（反射填充）"""
    if not 0.0 <= probability <= 1.0:
        raise ParameterException(f"probability 必须在 [0, 1] 内: {probability}")
    gen = rng.generator()
    u, r = torch.rand(2, generator=gen, dtype=torch.float64).tolist()
    if u >= probability:
        return image
    angle = math.radians((2.0 * r - 1.0) * max_degrees)
    single = image.ndim == 3
    x = image.unsqueeze(0) if single else image
    cos, sin = math.cos(angle), math.sin(angle)
    theta = torch.tensor([[cos, -sin, 0.0], [sin, cos, 0.0]], dtype=x.dtype).expand(x.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="reflection", align_corners=False)
    return out.squeeze(0) if single else out
