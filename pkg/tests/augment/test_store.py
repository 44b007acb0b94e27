"""
合成存储生成测试
"""
import pytest
import torch

from dafkit.augment import (
    GenerationContext,
    SyntheticStore,
    build_dafusion_policy,
    build_store,
    identity_policy,
    record_path,
)
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.diffusion import NULL_CONCEPT, from_pixels, to_pixels
from dafkit.models import MaskMode, RecordStatus, SamplerConfig, TransformKind
from tests.conftest import FailingNet, ZeroNet


def _context(factory, net=None, **kwargs) -> GenerationContext:
    return GenerationContext(
        net=net or ZeroNet(factory.cond_dim),
        table=factory.table(classes=[0, 1]),
        schedule=factory.schedule(100),
        sampler=SamplerConfig(steps=4, guidance_scale=2.0, batch_size=2),
        **kwargs,
    )


def _images(store: SyntheticStore):
    return {(r.i, r.j): store.image(r.i, r.j) for r in store.records() if store.has(r.i, r.j)}


def test_identity_store_copies_sources(factory):
    records = factory.records(classes=2, per_class=2)
    store = build_store(records, identity_policy(), 3, _context(factory), RngStream(0, "augment"))
    assert store.is_complete
    assert len(store) == 12
    for record in store.records():
        assert torch.equal(store.image(record.i, record.j), records[record.i].image)
        assert record.concept_id == NULL_CONCEPT
        assert record.path == record_path(record.class_id, record.image_id, record.j)
    assert store.available_keys() == [(i, j) for i in range(4) for j in range(3)]


def test_generative_store_deterministic(factory):
    records = factory.records(classes=2, per_class=2)
    policy = build_dafusion_policy(2)
    a = build_store(records, policy, 2, _context(factory), RngStream(0, "augment"))
    b = build_store(records, policy, 2, _context(factory, workers=3), RngStream(0, "augment"))
    assert a.records() == b.records()
    images_a, images_b = _images(a), _images(b)
    assert images_a.keys() == images_b.keys()
    for key in images_a:
        assert torch.equal(images_a[key], images_b[key])
        # 输出已按 8 位量化
        assert torch.equal(images_a[key], from_pixels(to_pixels(images_a[key])))
    for record in a.records():
        assert record.concept_id == f"class/{record.class_id}"
        assert record.t0 in (0.5, 1.0)


def test_resumed_store_matches_full_run(factory):
    records = factory.records(classes=2, per_class=2)
    policy = build_dafusion_policy(2)
    full = build_store(records, policy, 2, _context(factory), RngStream(0, "augment"))

    partial = SyntheticStore(len(records), 2, policy)
    for record in full.records()[:3]:
        partial.put(record, full.image(record.i, record.j))
    seen = []
    resumed = build_store(
        records, policy, 2, _context(factory), RngStream(0, "augment"),
        existing=partial, on_record=lambda r, image: seen.append((r.i, r.j)),
    )
    assert len(seen) == 5
    assert resumed.is_complete
    full_images = _images(full)
    for key, image in _images(resumed).items():
        assert torch.equal(image, full_images[key])


def test_failed_records_do_not_abort(factory):
    records = factory.records(classes=2, per_class=1)
    store = build_store(records, build_dafusion_policy(2), 2, _context(factory, net=FailingNet()),
                        RngStream(0, "augment"))
    assert not store.is_complete
    assert len(store.failed_records()) == 4
    assert store.available_keys() == []
    for record in store.failed_records():
        assert record.status == RecordStatus.FAILED
        assert "模拟的网络故障" in record.error


def test_real_guidance_uses_null_concept(factory):
    records = factory.records(classes=2, per_class=1)
    context = _context(factory, real_guidance=True)
    context.table = factory.table()
    store = build_store(records, build_dafusion_policy(1, t0=0.5), 2, context, RngStream(0, "augment"))
    assert store.is_complete
    assert {r.concept_id for r in store.records()} == {NULL_CONCEPT}


def test_masked_policy_requires_masks(factory):
    records = factory.records(classes=1, per_class=2, masks=False)
    policy = build_dafusion_policy(2, TransformKind.SDEDIT_MASKED, mask_mode=MaskMode.FOREGROUND)
    with pytest.raises(ParameterException):
        build_store(records, policy, 1, _context(factory), RngStream(0, "augment"))


def test_masked_store_preserves_background(factory):
    records = factory.records(classes=1, per_class=2)
    policy = build_dafusion_policy(2, TransformKind.SDEDIT_MASKED, mask_mode=MaskMode.FOREGROUND)
    store = build_store(records, policy, 2, _context(factory, mask_radius=1), RngStream(0, "augment"))
    assert store.is_complete
    for record in store.records():
        image = store.image(record.i, record.j)
        source = records[record.i].image
        # 膨胀后的方块为 [1, 7)，之外的像素保持原值
        outside = torch.ones(8, 8, dtype=torch.bool)
        outside[1:7, 1:7] = False
        assert torch.equal(image[:, outside], source[:, outside])


def test_store_rejects_zero_m(factory):
    with pytest.raises(ParameterException):
        build_store(factory.records(), identity_policy(), 0, _context(factory), RngStream(0))
