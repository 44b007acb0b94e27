"""
程序化玩具数据集

在归一化坐标 [-1, 1]² 上用解析不等式光栅化形状，得到二值前景掩码；
前景颜色叠加分块纹理噪声，背景取自共享调色板。像素量化到 8 位网格，
与 PNG 存储逐位一致。
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from dafkit.augment import DatasetRecord
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.diffusion import from_pixels, to_pixels
from dafkit.models import ShapeFamily, ToyClassSpec, ToyDatasetSpec

# 干扰物体相对主体的最大尺寸
DISTRACTOR_SCALE = 0.5


def _grid(resolution: int) -> Tuple[torch.Tensor, torch.Tensor]:
    coords = (torch.arange(resolution, dtype=torch.float64) + 0.5) / resolution * 2.0 - 1.0
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    return xx, yy


def shape_mask(family: ShapeFamily, resolution: int, cx: float, cy: float, radius: float) -> torch.Tensor:
    """形状族的二值掩码；radius 为归一化坐标下的外接半径"""
    xx, yy = _grid(resolution)
    dx, dy = (xx - cx) / radius, (yy - cy) / radius
    if family == ShapeFamily.CIRCLE:
        inside = dx ** 2 + dy ** 2 <= 1.0
    elif family == ShapeFamily.SQUARE:
        inside = (dx.abs() <= 1.0) & (dy.abs() <= 1.0)
    elif family == ShapeFamily.TRIANGLE:
        # 尖角朝上的等边三角形，外接圆半径 1
        inside = (dy <= 0.5) & (dy >= -1.0 + math.sqrt(3.0) * dx.abs())
    elif family == ShapeFamily.CROSS:
        arm = 1.0 / 3.0
        inside = ((dx.abs() <= 1.0) & (dy.abs() <= arm)) | ((dx.abs() <= arm) & (dy.abs() <= 1.0))
    elif family == ShapeFamily.RING:
        r2 = dx ** 2 + dy ** 2
        inside = (r2 <= 1.0) & (r2 >= 0.55 ** 2)
    elif family == ShapeFamily.DIAMOND:
        inside = dx.abs() + dy.abs() <= 1.0
    elif family == ShapeFamily.HBAR:
        inside = (dx.abs() <= 1.0) & (dy.abs() <= 0.35)
    elif family == ShapeFamily.VBAR:
        inside = (dx.abs() <= 0.35) & (dy.abs() <= 1.0)
    else:
        raise ParameterException(f"未知形状族: {family}")
    return inside.to(torch.float64)


def _uniform(gen: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(torch.rand(1, generator=gen, dtype=torch.float64))


def _color(cls: ToyClassSpec, gen: torch.Generator) -> torch.Tensor:
    if cls.color is None:
        return torch.rand(3, generator=gen, dtype=torch.float64) * 1.0 - 0.1
    base = torch.tensor(cls.color, dtype=torch.float64)
    return base + cls.color_std * torch.randn(3, generator=gen, dtype=torch.float64)


def _texture(cls: ToyClassSpec, resolution: int, gen: torch.Generator) -> torch.Tensor:
    blocks = math.ceil(resolution / cls.texture_scale)
    noise = torch.randn(1, 3, blocks, blocks, generator=gen, dtype=torch.float64) * cls.texture_noise
    noise = F.interpolate(noise, scale_factor=cls.texture_scale, mode="nearest")
    return noise[0, :, :resolution, :resolution]


def _place(gen: torch.Generator, scale: float) -> Tuple[float, float, float]:
    """在图像内随机放置：返回中心与归一化半径"""
    radius = 2.0 * scale
    cx = _uniform(gen, -1.0 + radius, 1.0 - radius)
    cy = _uniform(gen, -1.0 + radius, 1.0 - radius)
    return cx, cy, radius


def render_toy_image(
    spec: ToyDatasetSpec,
    class_index: int,
    stream: RngStream,
) -> Tuple[torch.Tensor, List[Tuple[int, torch.Tensor]]]:
    """生成一张图像与其 (类别, 可见掩码) 列表"""
    gen = stream.generator()
    res = spec.resolution
    cls = spec.classes[class_index]

    bg_index = int(torch.randint(len(spec.backgrounds), (1,), generator=gen))
    background = torch.tensor(spec.backgrounds[bg_index], dtype=torch.float64)[:, None, None]
    image = background + spec.background_noise * torch.randn(3, res, res, generator=gen, dtype=torch.float64)

    lo, hi = spec.scale_range
    scale = _uniform(gen, lo, hi)
    layers: List[Tuple[int, ToyClassSpec, float]] = []
    if _uniform(gen, 0.0, 1.0) < spec.distractor_prob:
        others = [k for k in range(spec.num_classes) if spec.classes[k].family != cls.family]
        if others:
            other = others[int(torch.randint(len(others), (1,), generator=gen))]
            layers.append((other, spec.classes[other], scale * _uniform(gen, 0.3, DISTRACTOR_SCALE)))
    layers.append((class_index, cls, scale))

    visible: List[Tuple[int, torch.Tensor]] = []
    for label, layer_cls, layer_scale in layers:
        cx, cy, radius = _place(gen, layer_scale)
        mask = shape_mask(layer_cls.family, res, cx, cy, radius)
        fill = _color(layer_cls, gen)[:, None, None] + _texture(layer_cls, res, gen)
        image = mask * fill + (1.0 - mask) * image
        # 后画的物体遮挡先画的
        visible = [(k, m * (1.0 - mask)) for k, m in visible]
        visible.append((label, mask))

    image = from_pixels(to_pixels(image))
    return image, [(k, m) for k, m in visible if float(m.sum()) > 0]


def label_from_masks(masks: Sequence[Tuple[int, torch.Tensor]]) -> int:
    """掩码像素数最多的类别；并列时取最小类别 id"""
    if not masks:
        raise ParameterException("掩码列表不能为空")
    union: Dict[int, torch.Tensor] = {}
    for class_id, mask in masks:
        m = mask > 0.5
        union[class_id] = union[class_id] | m if class_id in union else m
    areas = {class_id: int(m.sum()) for class_id, m in union.items()}
    best = max(areas.values())
    return min(class_id for class_id, area in areas.items() if area == best)


def gen_toy_dataset(spec: ToyDatasetSpec, name: Optional[str] = None) -> List[DatasetRecord]:
    """按类别顺序生成 classes × images_per_class 条记录；相同 seed 结果逐位相同"""
    root = RngStream(spec.seed, "toy")
    records: List[DatasetRecord] = []
    for class_index, cls in enumerate(spec.classes):
        for k in range(spec.images_per_class):
            image, masks = render_toy_image(spec, class_index, root.child(i=class_index, j=k))
            label = label_from_masks(masks) if masks else class_index
            records.append(
                DatasetRecord(
                    index=len(records),
                    image=image,
                    label=label,
                    image_id=f"{cls.name}_{k:04d}",
                    masks=masks if spec.emit_masks else [],
                    source=name,
                )
            )
    return records
