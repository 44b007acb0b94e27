"""
特征提取器与线性探针测试
"""
import pytest
import torch

from dafkit.core.exceptions import ParameterException
from dafkit.core.rng import RngStream, torch_seed
from dafkit.fewshot import FeatureExtractor, LinearProbe, flip_augmenter, train_extractor, train_probe
from dafkit.models import ProbeConfig, SlotOrigin, TrainConfig


def _halves(n: int, seed: int):
    """左亮/右亮两类图像"""
    images, labels = [], []
    for k in range(n):
        label = k % 2
        image = torch.full((3, 8, 8), -0.8, dtype=torch.float64)
        if label == 0:
            image[:, :, :4] = 0.8
        else:
            image[:, :, 4:] = 0.8
        image += 0.02 * RngStream(seed, "halves", i=k).randn(3, 8, 8)
        images.append(image)
        labels.append(label)
    return images, labels


@pytest.fixture
def extractor():
    with torch_seed(RngStream(0, "test/extractor")):
        return FeatureExtractor(in_channels=3, feature_dim=8).freeze()


def _batches(images, labels, size=8):
    def batches(step):
        picks = torch.randint(len(images), (size,), generator=RngStream(1, "batch", t=step).generator()).tolist()
        return [(images[k], labels[k], SlotOrigin.REAL) for k in picks]
    return batches


def test_probe_learns_separable_classes(extractor):
    images, labels = _halves(20, seed=0)
    val_images, val_labels = _halves(10, seed=1)
    validation = (torch.stack(val_images), torch.tensor(val_labels))
    cfg = ProbeConfig(learning_rate=0.05, steps=100, eval_interval=10)
    result = train_probe(LinearProbe(extractor, 2), _batches(images, labels), validation, cfg)
    # 零初始化的头全部预测类别 0
    assert result.history[0] == (0, 0.5)
    assert result.best_accuracy >= 0.95
    assert result.best_step > 0
    assert [step for step, _ in result.history] == list(range(0, 101, 10))
    assert not any(p.requires_grad for p in extractor.parameters())


def test_probe_zero_steps(extractor):
    images, labels = _halves(4, seed=0)
    validation = (torch.stack(images), torch.tensor(labels))
    cfg = ProbeConfig(steps=0)
    result = train_probe(LinearProbe(extractor, 2), _batches(images, labels), validation, cfg)
    assert (result.best_accuracy, result.best_step) == (0.5, 0)


def test_probe_deterministic(extractor):
    images, labels = _halves(12, seed=0)
    validation = (torch.stack(images), torch.tensor(labels))
    cfg = ProbeConfig(learning_rate=0.01, steps=20, eval_interval=5, seed=3)
    augment = flip_augmenter(["horizontal"], 0.5)
    a = train_probe(LinearProbe(extractor, 2), _batches(images, labels), validation, cfg, augment=augment)
    b = train_probe(LinearProbe(extractor, 2), _batches(images, labels), validation, cfg, augment=augment)
    assert a.history == b.history
    assert torch.equal(a.probe.head.weight, b.probe.head.weight)


def test_probe_validation(extractor):
    with pytest.raises(ParameterException):
        LinearProbe(extractor, 1)
    empty = (torch.zeros(0, 3, 8, 8), torch.zeros(0, dtype=torch.long))
    with pytest.raises(ParameterException):
        train_probe(LinearProbe(extractor, 2), _batches(*_halves(2, 0)), empty, ProbeConfig(steps=1))


def test_flip_augmenter():
    image = torch.arange(4.0).reshape(1, 2, 2)
    always = flip_augmenter(["horizontal", "vertical"], 1.0)
    assert torch.equal(always(image, RngStream(0)), torch.flip(image, dims=(-1, -2)))
    never = flip_augmenter(["horizontal"], 0.0)
    assert torch.equal(never(image, RngStream(0)), image)


def test_train_extractor_returns_frozen(factory):
    records = factory.records(classes=2, per_class=4, masks=False)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, steps=2, seed=0, log_every=0)
    extractor = train_extractor(records, cfg, feature_dim=8)
    assert extractor.hparams() == {"in_channels": 3, "feature_dim": 8, "width": 32}
    assert not extractor.training
    assert not any(p.requires_grad for p in extractor.parameters())
    again = train_extractor(records, cfg, feature_dim=8)
    for a, b in zip(extractor.state_dict().values(), again.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ParameterException):
        train_extractor([], cfg)
