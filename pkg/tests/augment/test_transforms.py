"""
翻转与旋转增强测试
"""
import pytest
import torch

from dafkit.augment import flip, flip_augment, rotate_augment
from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream


def _image():
    return torch.arange(18, dtype=torch.float64).reshape(2, 3, 3)


def test_flip_modes():
    image = _image()
    assert torch.equal(flip(image, "horizontal")[:, :, 0], image[:, :, 2])
    assert torch.equal(flip(image, "vertical")[:, 0, :], image[:, 2, :])
    with pytest.raises(ParameterException):
        flip(image, "diagonal")


def test_flip_augment_probability_endpoints():
    image = _image()
    assert torch.equal(flip_augment(image, "horizontal", 0.0, RngStream(0)), image)
    assert torch.equal(flip_augment(image, "horizontal", 1.0, RngStream(0)), flip(image, "horizontal"))
    with pytest.raises(ParameterException):
        flip_augment(image, "horizontal", 1.5, RngStream(0))


def test_flip_augment_frequency():
    image = _image()
    flips = sum(
        not torch.equal(flip_augment(image, "horizontal", 0.5, RngStream(1, i=n)), image)
        for n in range(4000)
    )
    assert abs(flips / 4000 - 0.5) < 0.03


def test_rotate_augment():
    image = torch.rand(3, 8, 8, dtype=torch.float64)
    assert torch.equal(rotate_augment(image, 30.0, 0.0, RngStream(0)), image)
    out = rotate_augment(image, 0.0, 1.0, RngStream(0))
    assert torch.allclose(out, image, atol=1e-12)
    rotated = rotate_augment(image, 30.0, 1.0, RngStream(2))
    assert rotated.shape == image.shape
    assert torch.equal(rotated, rotate_augment(image, 30.0, 1.0, RngStream(2)))
    batch = rotate_augment(image.unsqueeze(0), 30.0, 1.0, RngStream(2))
    assert batch.shape == (1, 3, 8, 8)
