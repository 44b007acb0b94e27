"""
DAFKIT1 检查点测试
"""
import json
import struct

import pytest
import torch

from dafkit.core.exceptions import CheckpointException
from dafkit.core.rng import RngStream, torch_seed
from dafkit.diffusion import NULL_CONCEPT
from dafkit.fewshot import FeatureExtractor
from dafkit.storage import load_backbone, load_extractor, save_backbone, save_extractor
from dafkit.storage.checkpoint import MAGIC, decode_container, encode_container, theta_hash
from tests.conftest import tiny_config


def test_container_round_trip():
    tensors = {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3), "b": torch.tensor(1.5)}
    data = encode_container(tensors, {"kind": "test", "n": 2})
    assert data.startswith(MAGIC)
    decoded, meta = decode_container(data)
    assert meta == {"kind": "test", "n": 2}
    assert torch.equal(decoded["a"], tensors["a"])
    assert decoded["b"].shape == ()
    assert float(decoded["b"]) == 1.5


def test_container_bytes_deterministic():
    tensors = {"w": torch.ones(3)}
    assert encode_container(tensors, {"z": 1, "a": 2}) == encode_container(tensors, {"a": 2, "z": 1})


@pytest.mark.parametrize("mutate", [
    lambda d: b"NOTDAFK\n" + d[8:],
    lambda d: d[:12],
    lambda d: d[:-4],
])
def test_container_corruption(mutate):
    data = encode_container({"w": torch.ones(3)}, {})
    with pytest.raises(CheckpointException):
        decode_container(mutate(data))


def _with_header(header, body: bytes = b"") -> bytes:
    raw = json.dumps(header).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + body


@pytest.mark.parametrize("header", [
    [1, 2, 3],
    "DAFKIT1",
    {"tensors": []},
    {"version": 1, "tensors": {"w": [3]}},
    {"version": 1, "tensors": [{"name": "w", "shape": [3]}]},
    {"version": 1, "tensors": [{"name": "w", "shape": [-3], "offset": 0, "nbytes": 12}]},
    {"version": 1, "tensors": [], "meta": [1]},
    {"version": 2, "tensors": []},
])
def test_container_malformed_header(header):
    with pytest.raises(CheckpointException) as exc:
        decode_container(_with_header(header, b"\x00" * 12))
    assert exc.value.code == 2


def test_backbone_round_trip(factory, tmp_path):
    net = factory.tiny_net(in_channels=3)
    table = factory.table(classes=[0, 1])
    schedule = factory.schedule(20)
    config = tiny_config()
    path = save_backbone(tmp_path / "backbone.dafkit", net, table, schedule, config, {"note": "x"})

    ckpt = load_backbone(path)
    assert theta_hash(ckpt.net) == theta_hash(net)
    assert not any(p.requires_grad for p in ckpt.net.parameters())
    assert ckpt.table.ids() == table.ids()
    assert ckpt.table.entry(NULL_CONCEPT).trainable
    assert ckpt.table.entry("class/1").class_id == 1
    assert ckpt.table.equals(table)
    assert torch.equal(ckpt.schedule.alpha_bars, schedule.alpha_bars)
    assert ckpt.config == config
    assert ckpt.meta == {"note": "x"}

    x = factory.image(3, 8).unsqueeze(0).to(torch.float32)
    t = torch.tensor([5])
    w = table.vectors(["class/0"])
    with torch.no_grad():
        assert torch.equal(ckpt.net(x, t, w), net(x, t, w))

    again = save_backbone(tmp_path / "again.dafkit", ckpt.net, ckpt.table, ckpt.schedule, ckpt.config, ckpt.meta)
    assert again.read_bytes() == path.read_bytes()


def test_backbone_hash_mismatch(factory, tmp_path):
    net = factory.tiny_net()
    path = save_backbone(tmp_path / "b.dafkit", net, factory.table(), factory.schedule(10), tiny_config())
    tensors, meta = decode_container(path.read_bytes())
    name = next(k for k in tensors if k.startswith("net/"))
    tensors[name] = tensors[name] + 1.0
    path.write_bytes(encode_container(tensors, meta))
    with pytest.raises(CheckpointException):
        load_backbone(path)


def test_missing_and_wrong_kind(factory, tmp_path):
    with pytest.raises(CheckpointException):
        load_backbone(tmp_path / "missing.dafkit")
    with torch_seed(RngStream(0, "test/extractor")):
        extractor = FeatureExtractor(in_channels=3, feature_dim=8)
    path = save_extractor(tmp_path / "e.dafkit", extractor, tiny_config())
    with pytest.raises(CheckpointException):
        load_backbone(path)

    loaded = load_extractor(path)
    assert loaded.hparams() == extractor.hparams()
    assert not loaded.training
    x = torch.rand(2, 3, 8, 8)
    extractor.eval()
    with torch.no_grad():
        assert torch.equal(loaded(x), extractor(x))
