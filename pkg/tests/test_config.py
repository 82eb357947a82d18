import json

import pytest

from lungkit.config import RunConfig, config_from_dict, dump_config, parse_config
from lungkit.errors import ConfigError


def test_empty_object_gives_defaults():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.preprocess.clahe_clip == 2.0 and cfg.preprocess.clahe_grid == 8
    assert cfg.train.lr == 1e-3 and cfg.cv.folds == 5 and cfg.model.rf_estimators == 100


def test_partial_override_keeps_other_defaults():
    cfg = config_from_dict({"train": {"epochs": 3}})
    assert cfg.train.epochs == 3 and cfg.train.seed == 42


def test_int_accepted_for_float():
    assert config_from_dict({"preprocess": {"clahe_clip": 3}}).preprocess.clahe_clip == 3.0


@pytest.mark.parametrize(
    "doc, key",
    [
        ({"preprocess": {"clahe_clip": -1}}, "clahe_clip"),
        ({"preprocess": {"size": "big"}}, "size"),
        ({"model": {"head": "knn"}}, "head"),
        ({"train": {"val_fraction": 1.0}}, "val_fraction"),
        ({"model": {"svm_gamma": "wide"}}, "svm_gamma"),
        ({"train": {"lr": 0}}, "lr"),
        ({"model": {"batchnorm": 1}}, "batchnorm"),
        ({"model": {"cnn_widths": []}}, "cnn_widths"),
    ],
)
def test_invalid_values_name_the_key(doc, key):
    with pytest.raises(ConfigError, match=key):
        config_from_dict(doc)


def test_unknown_keys():
    with pytest.raises(ConfigError, match="unknown key: train.momentum"):
        config_from_dict({"train": {"momentum": 0.9}})
    with pytest.raises(ConfigError, match="unknown key: extras"):
        config_from_dict({"extras": {}})


def test_round_trip(tmp_path):
    cfg = config_from_dict({"model": {"task": "hybrid", "head": "rf"}, "cv": {"seed": 3}})
    p = tmp_path / "cfg.json"
    p.write_text(dump_config(cfg))
    assert parse_config(p) == cfg


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(bad)
    bad.write_text(json.dumps([1]))
    with pytest.raises(ConfigError):
        parse_config(bad)
