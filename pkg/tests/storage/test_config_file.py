"""
配置文档读写测试
"""
import json

import pytest

from dafkit.core.exceptions import ConfigException
from dafkit.models import ConfigDoc
from dafkit.storage import dump_config, load_config, parse_config, save_config
from tests.conftest import tiny_config


def test_default_round_trip(tmp_path):
    path = save_config(tmp_path / "c.toml", ConfigDoc())
    assert load_config(path) == ConfigDoc()


def test_tiny_round_trip_and_hash(tmp_path):
    config = tiny_config(seed=3)
    loaded = load_config(save_config(tmp_path / "c.toml", config))
    assert loaded == config
    assert loaded.config_hash() == config.config_hash()
    assert dump_config(loaded) == dump_config(config)


def test_partial_document_uses_defaults():
    config = parse_config('[run]\nseed = 9\n\n[table1]\nstacked_augmentations = 2\n')
    assert config.run.seed == 9
    assert config.table1.stacked_augmentations == 2
    assert config.table1.synthetic_probability == 0.5
    assert config.sampler.steps == 50


def test_null_fields_resolved_on_dump():
    config = ConfigDoc.model_validate({"sampler": {"steps": None}, "fewshot": {"probe_steps": None}})
    text = dump_config(config)
    reloaded = parse_config(text)
    assert reloaded.sampler.steps == config.table1.denoising_steps
    assert reloaded.fewshot.probe_steps == config.table1.classifier_training_steps
    assert reloaded.fewshot.inversion_steps is None
    assert reloaded.sampler_config() == config.sampler_config()


def test_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"fewshot": {"trials": 3}}), encoding="utf-8")
    assert load_config(path).fewshot.trials == 3


@pytest.mark.parametrize("text", [
    "[table1]\nno_such_key = 1\n",
    "[table1]\nclass_agnostic_prompt = \"a photo\"\n",
    "[unknown_section]\nx = 1\n",
    "[table1]\nsynthetic_probability = 1.5\n",
    "[fewshot]\nq_grid = [4, 2]\n",
    "[table1]\nstacked_augmentations = 2\nactivation_probabilities = [0.5, 0.6]\n",
    "not = valid = toml",
])
def test_invalid_documents(text):
    with pytest.raises(ConfigException) as exc:
        parse_config(text)
    assert exc.value.code == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigException):
        load_config(tmp_path / "missing.toml")
