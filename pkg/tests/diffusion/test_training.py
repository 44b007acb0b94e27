"""
损失、骨干训练、概念微调与梯度校验测试
"""
import pytest
import torch

from dafkit.core.exceptions import ParameterException, TrainingDivergenceException
from dafkit.core.rng import RngStream
from dafkit.diffusion import (
    NULL_CONCEPT,
    difference_numerator,
    dihedral_views,
    finetune_concepts,
    gradient_check,
    held_out_loss,
    loss_simple,
    train_denoiser,
)
from dafkit.models import Granularity, TrainConfig
from tests.conftest import NanNet, OracleNet, ZeroNet


def _state(net):
    return {k: v.clone() for k, v in net.state_dict().items()}


def _same_state(a, b) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_loss_is_zero_for_oracle(factory):
    schedule = factory.schedule(100)
    x0 = factory.image(1, 4)
    net = OracleNet(x0, schedule, factory.cond_dim)
    batch = [(x0, NULL_CONCEPT)] * 3
    assert float(loss_simple(net, factory.table(), batch, schedule, RngStream(0, "l"))) < 1e-18


def test_loss_reproducible_and_positive(factory):
    schedule = factory.schedule(100)
    batch = [(factory.image(1, 4), NULL_CONCEPT), (factory.image(1, 4), NULL_CONCEPT)]
    a = held_out_loss(ZeroNet(), factory.table(), batch, schedule, RngStream(0, "l"))
    b = held_out_loss(ZeroNet(), factory.table(), batch, schedule, RngStream(0, "l"))
    assert a == b
    # 零预测时损失为噪声平方和，期望约为像素数 16
    assert 0 < a < 64
    with pytest.raises(ParameterException):
        loss_simple(ZeroNet(), factory.table(), [], schedule, RngStream(0, "l"))


def test_zero_prediction_loss_is_pixel_count(factory):
    """零预测时每个样本的损失为 ε 的平方和，期望为 C·H·W"""
    schedule = factory.schedule(100)
    image = factory.image(3, 4)
    batch = [(image, NULL_CONCEPT)] * 2000
    loss = held_out_loss(ZeroNet(), factory.table(), batch, schedule, RngStream(3, "mc"))
    assert abs(loss - 48.0) < 1.5


def test_loss_invariant_to_batch_order(factory):
    schedule = factory.schedule(50)
    table = factory.table(classes=[0, 1])
    net = factory.tiny_net()
    batch = [(factory.image(1, 8), "class/0" if k % 2 else "class/1") for k in range(5)]
    streams = RngStream(6, "order").fork(5)
    order = [3, 0, 4, 1, 2]
    with torch.no_grad():
        a = loss_simple(net, table, batch, schedule, streams)
        b = loss_simple(net, table, [batch[k] for k in order], schedule, [streams[k] for k in order])
    assert float(a) == pytest.approx(float(b), rel=1e-6)


def test_train_denoiser_updates_trainable_only(factory):
    schedule = factory.schedule(50)
    table = factory.table(classes=[0])
    net = factory.tiny_net()
    dataset = [(factory.image(1, 8), "class/0") for _ in range(4)]
    null_before = table.get(NULL_CONCEPT).clone()
    class_before = table.get("class/0").clone()
    theta_before = _state(net)

    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, steps=3, seed=0, log_every=0)
    train_denoiser(dataset, net, table, schedule, cfg, uncond_prob=0.5)

    assert not _same_state(theta_before, _state(net))
    assert not torch.equal(table.get(NULL_CONCEPT), null_before)
    assert torch.equal(table.get("class/0"), class_before)
    assert not table.get(NULL_CONCEPT).requires_grad


def test_train_denoiser_deterministic(factory):
    schedule = factory.schedule(50)
    dataset = [(factory.image(1, 8, seed=k), "class/0") for k in range(4)]
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, steps=2, seed=5, log_every=0)
    runs = []
    for _ in range(2):
        net, table = factory.tiny_net(), factory.table(classes=[0])
        train_denoiser(dataset, net, table, schedule, cfg)
        runs.append((_state(net), table))
    assert _same_state(runs[0][0], runs[1][0])
    assert runs[0][1].equals(runs[1][1])


def test_train_denoiser_zero_steps(factory):
    net = factory.tiny_net()
    before = _state(net)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, steps=0)
    train_denoiser([(factory.image(1, 8), NULL_CONCEPT)], net, factory.table(), factory.schedule(), cfg)
    assert _same_state(before, _state(net))


def test_train_denoiser_divergence(factory):
    cfg = TrainConfig(learning_rate=1e-3, batch_size=1, steps=3)
    table = factory.table()
    with pytest.raises(TrainingDivergenceException) as exc:
        train_denoiser([(factory.image(1, 4), NULL_CONCEPT)], NanNet(), table, factory.schedule(), cfg)
    assert exc.value.step == 1
    assert exc.value.code == 3
    # 发散后表中不残留梯度叶子
    assert not table.get(NULL_CONCEPT).requires_grad
    assert table.get(NULL_CONCEPT).grad_fn is None


def test_dihedral_views():
    image = torch.arange(4.0).reshape(1, 2, 2)
    views = dihedral_views(image)
    assert len(views) == 6
    assert torch.equal(views[0], image)
    assert torch.equal(views[4], torch.flip(image, dims=(-1,)))


def test_finetune_concepts_freezes_theta(factory):
    schedule = factory.schedule(50)
    net = factory.tiny_net()
    table = factory.table()
    theta_before = _state(net)
    class_images = {c: [(f"img{c}_{k}", factory.image(1, 8)) for k in range(2)] for c in range(3)}
    cfg = TrainConfig(learning_rate=5e-3, batch_size=2, steps=3, seed=0, log_every=0)

    tuned = finetune_concepts(net, table, class_images, schedule, cfg, granularity=Granularity.POOLED)

    assert _same_state(theta_before, _state(net))
    assert len(table) == 1
    assert tuned.missing_classes([0, 1, 2]) == []
    new = [cid for cid in tuned.ids() if cid not in table]
    assert new == ["class/0", "class/1", "class/2"]
    for cid in new:
        assert not torch.equal(tuned.get(cid), table.get(NULL_CONCEPT))
        assert not tuned.get(cid).requires_grad
    assert torch.equal(tuned.get(NULL_CONCEPT), table.get(NULL_CONCEPT))

    again = finetune_concepts(net, table, class_images, schedule, cfg, granularity=Granularity.POOLED)
    assert again.equals(tuned)


def test_finetune_concepts_specific(factory):
    net = factory.tiny_net()
    class_images = {0: [("a", factory.image(1, 8)), ("b", factory.image(1, 8))]}
    cfg = TrainConfig(learning_rate=5e-3, batch_size=2, steps=1)
    tuned = finetune_concepts(net, factory.table(), class_images, factory.schedule(50), cfg,
                              granularity=Granularity.SPECIFIC)
    assert tuned.granularity == Granularity.SPECIFIC
    assert tuned.concept_for(0, "a") == "class/0/image/a"
    assert tuned.concept_for(0, "b") == "class/0/image/b"


def test_finetune_concepts_empty_class(factory):
    cfg = TrainConfig(learning_rate=5e-3, batch_size=2, steps=1)
    with pytest.raises(ParameterException):
        finetune_concepts(factory.tiny_net(), factory.table(), {0: []}, factory.schedule(), cfg)


def test_difference_numerator_restores_coordinate():
    flat = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    numerator = difference_numerator(lambda: float((flat ** 2).sum()), flat, 1, 1e-3)
    assert numerator == pytest.approx(4 * 2.0 * 1e-3, rel=1e-9)
    assert flat.tolist() == [1.0, 2.0, 3.0]


def test_gradient_check_passes(factory):
    net = factory.tiny_net()
    table = factory.table(classes=[0])
    batch = [(factory.image(1, 8), "class/0"), (factory.image(1, 8), "class/0")]
    error = gradient_check(net, table, batch, factory.schedule(50), RngStream(0, "gc"), theta_coords=16)
    assert error < 1e-4
    # 原网络保持 float32 且未被修改
    assert next(net.parameters()).dtype == torch.float32


def test_gradient_check_batch_size(factory):
    batch = [(factory.image(1, 8), NULL_CONCEPT)] * 5
    with pytest.raises(ParameterException):
        gradient_check(factory.tiny_net(), factory.table(), batch, factory.schedule(), RngStream(0, "gc"))


class ShiftNet:
    """数据为常数图像 μ 时的精确噪声预测，μ 取嵌入的第一个分量"""

    def __init__(self, schedule, cond_dim: int = 4):
        self.schedule = schedule
        self.cond_dim = cond_dim

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        abar = self.schedule.alpha_bars[t.long()].reshape(-1, 1, 1, 1).to(x.dtype)
        mu = w[:, 0].reshape(-1, 1, 1, 1).to(x.dtype)
        return (x - abar.sqrt() * mu) / (1.0 - abar).sqrt()


def test_finetuned_concepts_condition_the_loss(factory):
    """微调后本类嵌入在本类图像上的损失低于他类嵌入"""
    schedule = factory.schedule(100)
    net = ShiftNet(schedule, factory.cond_dim)
    levels = {0: 0.5, 1: -0.5}
    class_images = {
        c: [(f"img{c}_{k}", torch.full((1, 4, 4), v, dtype=torch.float64)) for k in range(2)]
        for c, v in levels.items()
    }
    cfg = TrainConfig(learning_rate=0.01, batch_size=4, steps=300, seed=0, log_every=0)
    tuned = finetune_concepts(net, factory.table(), class_images, schedule, cfg)

    for c, other in ((0, 1), (1, 0)):
        image = class_images[c][0][1]
        own = held_out_loss(net, tuned, [(image, f"class/{c}")] * 200, schedule, RngStream(9, "cond"))
        cross = held_out_loss(net, tuned, [(image, f"class/{other}")] * 200, schedule, RngStream(9, "cond"))
        assert own < cross
        assert abs(float(tuned.get(f"class/{c}")[0]) - levels[c]) < 0.1
