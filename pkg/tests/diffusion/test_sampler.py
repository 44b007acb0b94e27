"""
反向采样、引导、SDEdit 与掩码混合测试
"""
import math

import pytest
import torch
from scipy import stats

from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.diffusion import (
    NULL_CONCEPT,
    generate,
    guided_noise,
    inpaint_blend,
    reverse_step,
    sampling_chain,
    sdedit,
    sdedit_masked,
)
from dafkit.models import SamplerConfig
from tests.conftest import EmbeddingNet, OracleNet, ZeroNet


class GaussianNet:
    """数据分布为 N(0, σ²I) 时的最优噪声预测"""

    def __init__(self, schedule, sigma: float = 0.5, cond_dim: int = 4):
        self.schedule = schedule
        self.sigma = sigma
        self.cond_dim = cond_dim

    def __call__(self, x: torch.Tensor, t: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        abar = self.schedule.alpha_bars[t.long()].reshape(-1, 1, 1, 1).to(x.dtype)
        return (1.0 - abar).sqrt() * x / (abar * self.sigma ** 2 + 1.0 - abar)


def test_reverse_step_matches_formula(factory):
    s = factory.schedule(100)
    x = RngStream(0, "x").randn(3, 4, 4)
    eps = RngStream(0, "e").randn(3, 4, 4)
    z = RngStream(0, "z").randn(3, 4, 4)
    for t in (1, 50, 100):
        mean = (x - s.beta(t) / math.sqrt(1 - s.alpha_bar(t)) * eps) / math.sqrt(s.alpha(t))
        assert torch.allclose(reverse_step(x, t, eps, s), mean, rtol=0, atol=1e-10)
        assert torch.allclose(reverse_step(x, t, eps, s, z), mean + math.sqrt(s.beta(t)) * z, rtol=0, atol=1e-10)
    with pytest.raises(ParameterException):
        reverse_step(x, 0, eps, s)


def test_sampling_chain_timesteps(factory):
    chain = sampling_chain(factory.schedule(100), 4)
    assert chain.steps == 4
    assert chain.timesteps == (25, 50, 75, 100)
    assert chain.net_timestep(1) == 25


def test_guided_noise_branches(factory):
    table = factory.table(classes=[0])
    net = EmbeddingNet(factory.cond_dim)
    x = factory.image(1, 4)
    w_c = float(table.get("class/0").sum()) * net.gain
    w_u = float(table.get(NULL_CONCEPT).sum()) * net.gain

    out0 = guided_noise(net, table, x, 5, "class/0", 0.0)
    assert torch.allclose(out0, torch.full_like(x, w_u), atol=1e-6)
    out1 = guided_noise(net, table, x, 5, "class/0", 1.0)
    assert torch.allclose(out1, torch.full_like(x, w_c), atol=1e-6)
    assert net.calls == [1, 1]

    out = guided_noise(net, table, x, 5, "class/0", 7.5)
    assert torch.allclose(out, torch.full_like(x, w_u + 7.5 * (w_c - w_u)), atol=1e-5)
    # 条件与无条件分支拼成一批
    assert net.calls[-1] == 2


def test_guided_noise_null_only_skips_uncond_branch(factory):
    table = factory.table()
    net = ZeroNet(factory.cond_dim)
    guided_noise(net, table, torch.zeros(2, 1, 4, 4), 3, [NULL_CONCEPT, NULL_CONCEPT], 7.5)
    assert net.calls == [2]


def test_generate_with_oracle_recovers_x0(factory):
    schedule = factory.schedule(100)
    x0 = factory.image(1, 4)
    net = OracleNet(x0, schedule, factory.cond_dim)
    cfg = SamplerConfig(steps=10, guidance_scale=7.5)
    out = generate(net, factory.table(), schedule, cfg, NULL_CONCEPT, RngStream(0, "g"), (1, 4, 4))
    assert out.shape == (1, 4, 4)
    assert torch.allclose(out, x0, rtol=0, atol=1e-6)


@pytest.mark.parametrize("t0", [0.25, 0.5, 1.0])
def test_sdedit_with_oracle_recovers_x0(factory, t0):
    schedule = factory.schedule(100)
    x0 = factory.image(1, 4)
    net = OracleNet(x0, schedule, factory.cond_dim)
    cfg = SamplerConfig(steps=20)
    out = sdedit(x0, t0, net, factory.table(), schedule, cfg, NULL_CONCEPT, RngStream(1, "s"))
    assert torch.allclose(out, x0, rtol=0, atol=1e-6)


def test_sdedit_t0_zero_is_identity(factory):
    x = factory.image(3, 4)
    out = sdedit(x, 0.0, ZeroNet(), factory.table(), factory.schedule(), SamplerConfig(steps=10), NULL_CONCEPT,
                 RngStream(0, "s"))
    assert torch.equal(out, x)
    assert out is not x


def test_sdedit_deterministic_per_stream(factory):
    schedule = factory.schedule(50)
    table = factory.table(classes=[0])
    net = factory.tiny_net()
    x = factory.image(1, 8)
    cfg = SamplerConfig(steps=5)
    a = sdedit(x, 0.6, net, table, schedule, cfg, "class/0", RngStream(7, "s"))
    b = sdedit(x, 0.6, net, table, schedule, cfg, "class/0", RngStream(7, "s"))
    c = sdedit(x, 0.6, net, table, schedule, cfg, "class/0", RngStream(8, "s"))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_batched_sampling_matches_per_item(factory):
    schedule = factory.schedule(50)
    table = factory.table(classes=[0, 1])
    net = EmbeddingNet(factory.cond_dim)
    cfg = SamplerConfig(steps=5)
    xs = torch.stack([factory.image(1, 4), factory.image(1, 4)])
    streams = [RngStream(3, "b", i=0), RngStream(3, "b", i=1)]
    batched = sdedit(xs, 0.8, net, table, schedule, cfg, ["class/0", "class/1"], streams)
    for b, cid in enumerate(["class/0", "class/1"]):
        single = sdedit(xs[b], 0.8, net, table, schedule, cfg, cid, streams[b])
        assert torch.allclose(batched[b], single, rtol=0, atol=1e-10)


def test_inpaint_blend_branches(factory):
    schedule = factory.schedule(100)
    x_t = RngStream(0, "xt").randn(1, 4, 4)
    x_ref = RngStream(0, "ref").randn(1, 4, 4)
    eta = RngStream(0, "eta").randn(1, 4, 4)
    zeros, ones = torch.zeros(4, 4), torch.ones(4, 4)
    assert torch.equal(inpaint_blend(x_t, x_ref, zeros, 30, eta, schedule), x_t)
    pinned = math.sqrt(schedule.alpha_bar(30)) * x_ref + math.sqrt(1 - schedule.alpha_bar(30)) * eta
    assert torch.allclose(inpaint_blend(x_t, x_ref, ones, 30, eta, schedule), pinned, rtol=0, atol=1e-12)
    assert torch.equal(inpaint_blend(x_t, x_ref, ones, 0, eta, schedule), x_ref)
    with pytest.raises(ParameterException):
        inpaint_blend(x_t, x_ref, torch.full((4, 4), 1.5), 30, eta, schedule)


def test_sdedit_masked_preserves_reference_exactly(factory):
    """保留区域在输出中与参考图逐位相同"""
    schedule = factory.schedule(50)
    table = factory.table(classes=[0])
    net = factory.tiny_net()
    cfg = SamplerConfig(steps=5)
    for k in range(5):
        x_ref = factory.image(1, 8)
        mask = (RngStream(k, "mask").randn(8, 8) > 0).to(torch.float64)
        out = sdedit_masked(x_ref, mask, 1.0, net, table, schedule, cfg, "class/0", RngStream(k, "m"))
        keep = mask.bool().expand_as(x_ref)
        assert torch.equal(out[keep], x_ref[keep])


def test_sdedit_masked_full_mask_returns_reference(factory):
    x_ref = factory.image(3, 4)
    out = sdedit_masked(x_ref, torch.ones(4, 4), 0.5, ZeroNet(), factory.table(), factory.schedule(20),
                        SamplerConfig(steps=4), NULL_CONCEPT, RngStream(0, "m"))
    assert torch.equal(out, x_ref)


def test_sdedit_masked_rejects_bad_mask(factory):
    with pytest.raises(ParameterException):
        sdedit_masked(factory.image(1, 4), torch.full((4, 4), -0.5), 0.5, ZeroNet(), factory.table(),
                      factory.schedule(20), SamplerConfig(steps=4), NULL_CONCEPT, RngStream(0, "m"))


def test_reverse_step_noise_variance(factory):
    """x 与 ε̂ 为零时输出标准差为 √β_t"""
    s = factory.schedule(100)
    zeros = torch.zeros(10_000)
    noise = RngStream(0, "var").randn(10_000)
    for t in (1, 50, 100):
        std = reverse_step(zeros, t, zeros, s, noise).std().item()
        assert abs(std / math.sqrt(s.beta(t)) - 1.0) < 0.03


def test_sdedit_full_strength_matches_generate_distribution(factory):
    """t0 = 1 的 SDEdit 与从纯噪声生成同分布"""
    schedule = factory.schedule(1000)
    net = GaussianNet(schedule)
    table = factory.table()
    cfg = SamplerConfig(steps=50)
    n = 200
    ids = [NULL_CONCEPT] * n
    generated = generate(net, table, schedule, cfg, ids, [RngStream(1, "gen", i=i) for i in range(n)], (1, 4, 4))
    x_ref = torch.full((n, 1, 4, 4), 0.8, dtype=torch.float64)
    edited = sdedit(x_ref, 1.0, net, table, schedule, cfg, ids, [RngStream(2, "edit", i=i) for i in range(n)])
    result = stats.ks_2samp(generated.flatten().numpy(), edited.flatten().numpy())
    assert result.pvalue > 1e-3


def test_inpaint_blend_binary_mask_is_idempotent(factory):
    schedule = factory.schedule(100)
    x_t = RngStream(1, "xt").randn(3, 4, 4)
    x_ref = RngStream(1, "ref").randn(3, 4, 4)
    eta = RngStream(1, "eta").randn(3, 4, 4)
    mask = (RngStream(1, "mask").randn(4, 4) > 0).to(torch.float64)
    once = inpaint_blend(x_t, x_ref, mask, 40, eta, schedule)
    twice = inpaint_blend(once, x_ref, mask, 40, eta, schedule)
    assert torch.equal(once, twice)


def test_inpaint_blend_fractional_mask_is_convex(factory):
    schedule = factory.schedule(100)
    x_t = RngStream(2, "xt").randn(3, 4, 4)
    x_ref = RngStream(2, "ref").randn(3, 4, 4)
    eta = RngStream(2, "eta").randn(3, 4, 4)
    mask = torch.rand(4, 4, generator=RngStream(2, "mask").generator(), dtype=torch.float64)
    pinned = math.sqrt(schedule.alpha_bar(40)) * x_ref + math.sqrt(1 - schedule.alpha_bar(40)) * eta
    out = inpaint_blend(x_t, x_ref, mask, 40, eta, schedule)
    lo, hi = torch.minimum(pinned, x_t), torch.maximum(pinned, x_t)
    assert bool((out >= lo - 1e-12).all()) and bool((out <= hi + 1e-12).all())
    assert torch.allclose(out, mask * pinned + (1 - mask) * x_t, rtol=0, atol=1e-12)


def test_inpaint_blend_checkerboard(factory):
    """棋盘掩码：黑格取参考轨迹，白格保持 x_t"""
    schedule = factory.schedule(100)
    x_t = RngStream(3, "xt").randn(1, 6, 6)
    x_ref = RngStream(3, "ref").randn(1, 6, 6)
    eta = RngStream(3, "eta").randn(1, 6, 6)
    rows, cols = torch.meshgrid(torch.arange(6), torch.arange(6), indexing="ij")
    board = ((rows + cols) % 2 == 0).to(torch.float64)
    pinned = math.sqrt(schedule.alpha_bar(10)) * x_ref + math.sqrt(1 - schedule.alpha_bar(10)) * eta
    out = inpaint_blend(x_t, x_ref, board, 10, eta, schedule)
    keep = board.bool().unsqueeze(0)
    assert torch.allclose(out[keep], pinned[keep], rtol=0, atol=1e-12)
    assert torch.equal(out[~keep], x_t[~keep])


def test_sdedit_masked_zero_mask_equals_sdedit(factory):
    schedule = factory.schedule(50)
    table = factory.table(classes=[0])
    net = factory.tiny_net()
    cfg = SamplerConfig(steps=5)
    x_ref = factory.image(1, 8)
    masked = sdedit_masked(x_ref, torch.zeros(8, 8), 0.6, net, table, schedule, cfg, "class/0", RngStream(4, "z"))
    plain = sdedit(x_ref, 0.6, net, table, schedule, cfg, "class/0", RngStream(4, "z"))
    assert torch.equal(masked, plain)


def test_guided_noise_is_collinear_in_scale(factory):
    """ε(s=2) − ε(s=0) = 2 · (ε(s=1) − ε(s=0))"""
    table = factory.table(classes=[0])
    net = factory.tiny_net()
    x = factory.image(1, 8)
    e0, e1, e2 = (guided_noise(net, table, x, 20, "class/0", s) for s in (0.0, 1.0, 2.0))
    assert not torch.allclose(e0, e1)
    assert torch.allclose(e2 - e0, 2.0 * (e1 - e0), rtol=0, atol=1e-5)
