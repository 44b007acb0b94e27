"""
PNG 编解码与数据集目录测试
"""
import pytest
import torch

from dafkit.core.exceptions import ParameterException
from dafkit.storage import load_image, load_mask, read_dataset_dir, save_image, save_mask, write_dataset_dir
from dafkit.storage.images import MASK_SUFFIX, encode_png


@pytest.mark.parametrize("channels", [1, 3])
def test_png_exact_for_quantized_images(factory, tmp_path, channels):
    image = factory.image(channels, 8)
    path = save_image(tmp_path / "x.png", image)
    loaded = load_image(path)
    assert loaded.dtype == torch.float64
    assert torch.equal(loaded, image)


def test_png_bytes_deterministic(factory):
    image = factory.image(3, 8, seed=5)
    assert encode_png(image) == encode_png(image.clone())


def test_png_rejects_bad_shape():
    with pytest.raises(ParameterException):
        encode_png(torch.zeros(2, 4, 4))


def test_load_image_not_png(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"not an image")
    with pytest.raises(ParameterException):
        load_image(path)


def test_mask_round_trip(factory, tmp_path):
    mask = factory.square_mask(8)
    loaded = load_mask(save_mask(tmp_path / "m.png", mask))
    assert torch.equal(loaded, mask)


def test_dataset_dir_round_trip(factory, tmp_path):
    records = factory.records(classes=2, per_class=2)
    records[3].masks = []
    write_dataset_dir(tmp_path / "data", records)
    assert (tmp_path / "data" / "0" / f"c0_0000{MASK_SUFFIX}").exists()

    loaded = read_dataset_dir(tmp_path / "data")
    assert [r.image_id for r in loaded] == [r.image_id for r in records]
    assert [r.label for r in loaded] == [0, 0, 1, 1]
    assert [r.index for r in loaded] == [0, 1, 2, 3]
    for a, b in zip(loaded, records):
        assert torch.equal(a.image, b.image)
    assert torch.equal(loaded[0].masks[0][1], factory.square_mask(8))
    assert loaded[0].masks[0][0] == 0
    assert loaded[3].masks == []


def test_dataset_dir_errors(tmp_path, factory):
    with pytest.raises(ParameterException):
        read_dataset_dir(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(ParameterException):
        read_dataset_dir(tmp_path / "empty")
    save_image(tmp_path / "named" / "cats" / "a.png", factory.image(3, 4))
    with pytest.raises(ParameterException):
        read_dataset_dir(tmp_path / "named")
