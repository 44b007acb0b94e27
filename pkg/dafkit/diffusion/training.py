"""
去噪网络训练

- loss_simple: 标准扩散损失（逐像素平方误差求和，对批取均值）
- train_denoiser: 骨干预训练，θ 与预训练概念联合优化
- finetune_concepts: 冻结 θ，只优化目标概念嵌入
- gradient_check: float64 中心差分校验
"""
from __future__ import annotations

import bisect
import copy
from typing import Callable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
from loguru import logger

from dafkit.core.exceptions import ParameterException, TrainingDivergenceException
from dafkit.core.rng import RngStream, as_streams
from dafkit.models import Granularity, TrainConfig

from .concepts import NULL_CONCEPT, ConceptTable, class_concept_id, image_concept_id
from .denoiser import NoisePredictor, net_dtype, predict_noise
from .schedule import NoiseSchedule, forward_sample

Batch = Sequence[Tuple[torch.Tensor, str]]
ClassImages = Mapping[int, Sequence[Tuple[str, torch.Tensor]]]


def _draw(stream: RngStream, shape: Sequence[int], T: int) -> Tuple[int, torch.Tensor]:
    gen = stream.generator()
    t = int(torch.randint(1, T + 1, (1,), generator=gen))
    eps = torch.randn(*shape, generator=gen, dtype=torch.float64)
    return t, eps


def loss_simple(
    net: NoisePredictor,
    table: ConceptTable,
    batch: Batch,
    schedule: NoiseSchedule,
    rng: Union[RngStream, Sequence[RngStream]],
) -> torch.Tensor:
    """
    批均值 ‖ε − ε_θ(√ᾱ_t x0 + √(1−ᾱ_t) ε, t, w)‖²

    每个样本的 t 与 ε 从自己的随机数流抽取；传入单个流时按批位置派生。
    返回网络精度下的标量张量，可反向传播到 θ 与嵌入。
    """
    if not batch:
        raise ParameterException("batch 不能为空")
    w = table.vectors([cid for _, cid in batch])
    streams = as_streams(rng, len(batch))

    x0 = torch.stack([x for x, _ in batch]).to(torch.float64)
    draws = [_draw(s, x0.shape[1:], schedule.T) for s in streams]
    t = torch.tensor([d[0] for d in draws], dtype=torch.long)
    eps = torch.stack([d[1] for d in draws])

    x_t = forward_sample(x0, t, eps, schedule)
    dtype = net_dtype(net, fallback=torch.float64)
    eps_hat = predict_noise(net, x_t.to(dtype), t, w)
    err = (eps_hat - eps.to(dtype)).pow(2).flatten(1).sum(dim=1)
    return err.mean()


def held_out_loss(
    net: NoisePredictor,
    table: ConceptTable,
    batch: Batch,
    schedule: NoiseSchedule,
    rng: Union[RngStream, Sequence[RngStream]],
) -> float:
    """固定批、固定随机数流上的损失（不求梯度）"""
    with torch.no_grad():
        return float(loss_simple(net, table, batch, schedule, rng))


def _check_finite(params: Sequence[torch.Tensor], step: int) -> None:
    for p in params:
        if not bool(torch.isfinite(p).all()):
            raise TrainingDivergenceException(step, f"参数出现非有限值: step={step}")


def train_denoiser(
    dataset: Sequence[Tuple[torch.Tensor, str]],
    net: nn.Module,
    table: ConceptTable,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    *,
    uncond_prob: float = 0.1,
) -> nn.Module:
    """
    骨干预训练

    每步从数据集有放回抽取 cfg.batch_size 个样本，按 uncond_prob 把概念替换为 null，
    以 Adam 同时更新 θ 与表中 trainable 的概念嵌入（原地修改 net 与 table）。
    """
    if not dataset:
        raise ParameterException("训练数据集不能为空")
    if not 0.0 <= uncond_prob <= 1.0:
        raise ParameterException(f"uncond_prob 必须在 [0, 1] 内: {uncond_prob}")

    images = [x for x, _ in dataset]
    concepts = [cid for _, cid in dataset]
    for cid in set(concepts):
        table.get(cid)

    if cfg.steps == 0:
        return net

    trainable = table.trainable_ids()
    embeddings: List[torch.Tensor] = []
    for cid in trainable:
        leaf = table.get(cid).detach().clone().to(net_dtype(net)).requires_grad_(True)
        table.set(cid, leaf)
        embeddings.append(leaf)
    params = [p for p in net.parameters() if p.requires_grad]

    optimizer = torch.optim.Adam(params + embeddings, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    root = RngStream(cfg.seed, "train")
    net.train()
    logger.info(
        "开始骨干训练: steps={} batch={} lr={} 样本数={} 可训练概念={}",
        cfg.steps, cfg.batch_size, cfg.learning_rate, len(dataset), len(embeddings),
    )

    try:
        for step in range(1, cfg.steps + 1):
            gen = root.child(i=step).generator()
            picks = torch.randint(len(dataset), (cfg.batch_size,), generator=gen).tolist()
            drop = (torch.rand(cfg.batch_size, generator=gen, dtype=torch.float64) < uncond_prob).tolist()
            batch = [(images[k], NULL_CONCEPT if d else concepts[k]) for k, d in zip(picks, drop)]
            streams = [root.child(tag="item", i=step, j=b) for b in range(cfg.batch_size)]

            loss = loss_simple(net, table, batch, schedule, streams)
            if not bool(torch.isfinite(loss)):
                raise TrainingDivergenceException(step)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            _check_finite(params + embeddings, step)

            if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps):
                logger.info("骨干训练 step {}/{} loss={:.4f}", step, cfg.steps, float(loss))
    finally:
        # 发散时嵌入同样还原为普通张量
        for cid, leaf in zip(trainable, embeddings):
            table.set(cid, leaf.detach())
        net.eval()
    return net


def dihedral_views(image: torch.Tensor) -> List[torch.Tensor]:
    """原图、90/180/270 度旋转、水平与竖直翻转"""
    return [
        image,
        torch.rot90(image, 1, dims=(-2, -1)),
        torch.rot90(image, 2, dims=(-2, -1)),
        torch.rot90(image, 3, dims=(-2, -1)),
        torch.flip(image, dims=(-1,)),
        torch.flip(image, dims=(-2,)),
    ]


def _inversion_targets(
    class_datasets: ClassImages,
    granularity: Granularity,
) -> List[Tuple[str, int, Optional[str], List[torch.Tensor]]]:
    targets = []
    for class_id in sorted(class_datasets):
        items = list(class_datasets[class_id])
        if not items:
            raise ParameterException(f"类别 {class_id} 没有训练图像", data={"class_id": class_id})
        if granularity == Granularity.SPECIFIC:
            for image_id, image in items:
                targets.append((image_concept_id(class_id, image_id), class_id, image_id, dihedral_views(image)))
        else:
            targets.append((class_concept_id(class_id), class_id, None, [image for _, image in items]))
    return targets


def finetune_concepts(
    net: NoisePredictor,
    table: ConceptTable,
    class_datasets: ClassImages,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    *,
    granularity: Granularity = Granularity.POOLED,
    init: Literal["null", "random"] = "null",
) -> ConceptTable:
    """
    概念嵌入微调（网络冻结）

    每个目标概念只用本类（或本图）的图像单独优化。新概念按 init 初始化，
    已存在的概念从当前值继续。返回新表，输入表与 θ 均不被修改。
    """
    targets = _inversion_targets(class_datasets, granularity)
    tuned = table.copy()
    tuned.granularity = granularity
    root = RngStream(cfg.seed, "invert")

    for cid, class_id, image_id, images in targets:
        if cid not in tuned:
            tuned.add(cid, class_id=class_id, image_id=image_id, init=init, rng=root.child(tag=f"init/{cid}"))
        tuned.entry(cid).trainable = True
        if cfg.steps == 0:
            continue

        vec = tuned.get(cid).detach().clone().requires_grad_(True)
        tuned.set(cid, vec)
        optimizer = torch.optim.Adam([vec], lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
        stream = root.child(tag=cid)
        loss = None
        for step in range(1, cfg.steps + 1):
            gen = stream.child(i=step).generator()
            picks = torch.randint(len(images), (cfg.batch_size,), generator=gen).tolist()
            batch = [(images[k], cid) for k in picks]
            streams = [stream.child(tag="item", i=step, j=b) for b in range(cfg.batch_size)]
            loss = loss_simple(net, tuned, batch, schedule, streams)
            if not bool(torch.isfinite(loss)):
                raise TrainingDivergenceException(step, f"概念微调发散: {cid} step={step}")
            (grad,) = torch.autograd.grad(loss, [vec])
            vec.grad = grad
            optimizer.step()
            vec.grad = None
        tuned.set(cid, vec.detach())
        logger.debug("概念 {} 微调完成 steps={} loss={:.4f}", cid, cfg.steps, float(loss))

    return tuned


def difference_numerator(
    evaluate: Callable[[], float],
    flat: torch.Tensor,
    index: int,
    h: float,
) -> float:
    """中心差分分子 f(x + h) − f(x − h)；坐标在返回前恢复原值"""
    original = flat[index].item()
    with torch.no_grad():
        flat[index] = original + h
        upper = evaluate()
        flat[index] = original - h
        lower = evaluate()
        flat[index] = original
    return upper - lower


def gradient_check(
    net: NoisePredictor,
    table: ConceptTable,
    batch: Batch,
    schedule: NoiseSchedule,
    rng: Union[RngStream, Sequence[RngStream]],
    *,
    concept_id: Optional[str] = None,
    theta_coords: int = 64,
    h: float = 1e-5,
) -> float:
    """
    对比 loss_simple 的解析梯度与 float64 中心差分，返回最大相对误差

    检查 θ 中随机抽取的 theta_coords 个坐标（网络冻结时跳过）以及一个概念嵌入的全部坐标。
    相对误差分母取 max(|a|, |n|, 1e-3 · max|a|)。
    """
    if not 1 <= len(batch) <= 4:
        raise ParameterException("梯度检查的批大小必须在 1..4 内")
    net64 = copy.deepcopy(net)
    if isinstance(net64, nn.Module):
        net64 = net64.double()
    table64 = table.copy(torch.float64)
    cid = concept_id or batch[0][1]
    vec = table64.get(cid).clone().requires_grad_(True)
    table64.set(cid, vec)

    params = [p for p in net64.parameters() if p.requires_grad] if isinstance(net64, nn.Module) else []
    loss = loss_simple(net64, table64, batch, schedule, rng)
    grads = torch.autograd.grad(loss, params + [vec], allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for g, x in zip(grads, params + [vec])]

    def evaluate() -> float:
        with torch.no_grad():
            return float(loss_simple(net64, table64, batch, schedule, rng))

    analytic: List[float] = []
    numeric: List[float] = []

    if params and theta_coords > 0:
        offsets = [0]
        for p in params:
            offsets.append(offsets[-1] + p.numel())
        gen = (rng if isinstance(rng, RngStream) else rng[0]).child(tag="gradcheck").generator()
        picks = torch.randperm(offsets[-1], generator=gen)[:theta_coords].tolist()
        for flat_index in picks:
            k = bisect.bisect_right(offsets, flat_index) - 1
            local = flat_index - offsets[k]
            numeric.append(difference_numerator(evaluate, params[k].detach().view(-1), local, h) / (2 * h))
            analytic.append(float(grads[k].reshape(-1)[local]))

    vec_grad = grads[-1]
    for index in range(vec.numel()):
        numeric.append(difference_numerator(evaluate, vec.detach().view(-1), index, h) / (2 * h))
        analytic.append(float(vec_grad[index]))

    if not analytic:
        return 0.0
    a = torch.tensor(analytic, dtype=torch.float64)
    n = torch.tensor(numeric, dtype=torch.float64)
    floor = 1e-3 * float(a.abs().max())
    denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
    rel = torch.where(denom > 0, (a - n).abs() / denom, torch.zeros_like(a))
    max_rel = float(rel.max())
    logger.debug("梯度检查: 坐标数={} 最大相对误差={:.3e}", len(analytic), max_rel)
    return max_rel
