from __future__ import annotations

import dataclasses
import json

import pytest

from translog import __version__
from translog.config import ConfigError, PipelineConfig
from translog.experiments import ExperimentSettings


def test_defaults_agree_with_experiment_settings():
    built = PipelineConfig().experiment_settings()
    assert built.to_dict() == ExperimentSettings().to_dict()


def test_partial_sections_fill_defaults():
    cfg = PipelineConfig.from_dict({"model": {"layers": 2}, "train": {"epochs": 3}})
    assert cfg.model.layers == 2 and cfg.model.d == 128
    assert cfg.train.epochs == 3 and cfg.train.batch_size == 64


@pytest.mark.parametrize("doc, match", [
    ({"nonsense": {}}, "unknown config section"),
    ({"model": {"depth": 3}}, "unknown key"),
    ({"model": {"d": 10, "heads": 3}}, "invalid 'model'"),
    ({"parser": {"preset": "nope"}}, "unknown mask preset"),
    ({"train": []}, "must be an object"),
    ([], "JSON object"),
])
def test_rejections(doc, match):
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.from_dict(doc)


def test_load_and_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"eval": {"threshold": 0.7}}))
    assert PipelineConfig.load(path).eval.threshold == 0.7
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        PipelineConfig.load(path)
    with pytest.raises(ConfigError, match="cannot read"):
        PipelineConfig.load(tmp_path / "missing.json")


def test_flag_override_wins():
    cfg = PipelineConfig.from_dict({"sessionizer": {"window_size": 10}})
    assert cfg.override("sessionizer", window_size=5).sessionizer.window_size == 5
    assert cfg.override("sessionizer", window_size=None).sessionizer.window_size == 10


def test_resolved_document_reloads(tmp_path):
    cfg = PipelineConfig().override("train", epochs=4)
    path = cfg.write_resolved(tmp_path, "tune --epochs 4")
    doc = json.loads(path.read_text())
    assert doc["version"] == __version__ and doc["command"] == "tune --epochs 4"
    assert PipelineConfig.from_dict(doc["config"]).to_dict() == cfg.to_dict()


def test_every_section_serializes():
    doc = PipelineConfig().to_dict()
    assert set(doc) == {"parser", "sessionizer", "embedder", "model", "train", "eval", "synth",
                        "experiment"}
    assert all(dataclasses.is_dataclass(getattr(PipelineConfig(), k)) for k in doc)
