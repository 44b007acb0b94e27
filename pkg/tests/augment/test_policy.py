"""
增强策略构建与抽样测试
"""
from collections import Counter

import pytest

from dafkit.augment import build_dafusion_policy, choose_augmentation, identity_policy, real_guidance_policy
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream
from dafkit.models import MaskMode, TransformKind


def test_stacked_policy_entries():
    policy = build_dafusion_policy(4)
    assert [e.transform.t0 for e in policy.entries] == [0.25, 0.5, 0.75, 1.0]
    assert policy.probabilities == [0.25] * 4
    assert all(e.transform.kind == TransformKind.SDEDIT for e in policy.entries)
    assert policy.is_generative
    assert not policy.needs_masks


def test_masked_policy():
    policy = build_dafusion_policy(2, TransformKind.SDEDIT_MASKED, mask_mode=MaskMode.BACKGROUND)
    assert policy.needs_masks
    assert policy.entries[0].transform.label() == "sdedit_masked(t0=0.5,background)"


def test_policy_with_flip_entries():
    policy = build_dafusion_policy(2, extra=[TransformKind.HFLIP])
    assert len(policy.entries) == 3
    assert policy.entries[2].transform.kind == TransformKind.HFLIP
    assert sum(policy.probabilities) == pytest.approx(1.0)


def test_fixed_t0_and_custom_probabilities():
    policy = build_dafusion_policy(2, t0=0.5, probabilities=[0.75, 0.25])
    assert [e.transform.t0 for e in policy.entries] == [0.5, 0.5]
    assert policy.probabilities == [0.75, 0.25]


@pytest.mark.parametrize("kwargs", [
    {"k": 0},
    {"k": 2, "probabilities": [0.5, 0.6]},
    {"k": 2, "probabilities": [1.0]},
    {"k": 2, "base": TransformKind.HFLIP},
    {"k": 2, "base": TransformKind.SDEDIT_MASKED},
])
def test_invalid_policies(kwargs):
    with pytest.raises(ParameterException):
        build_dafusion_policy(**kwargs)


def test_choose_augmentation_frequencies():
    policy = build_dafusion_policy(4)
    draws = 40000
    root = RngStream(7, "choose")
    counts = Counter(choose_augmentation(policy, root.child(i=n)) for n in range(draws))
    assert set(counts) == {0, 1, 2, 3}
    for index in range(4):
        assert abs(counts[index] / draws - 0.25) < 0.01


def test_choose_augmentation_deterministic():
    policy = build_dafusion_policy(4)
    stream = RngStream(3, "choose", i=5)
    assert choose_augmentation(policy, stream) == choose_augmentation(policy, stream)


def test_reference_policies():
    rg = real_guidance_policy()
    assert len(rg.entries) == 1
    assert rg.entries[0].transform.t0 == 0.5
    ident = identity_policy()
    assert not ident.is_generative
    assert choose_augmentation(ident, RngStream(0)) == 0
