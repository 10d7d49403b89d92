from __future__ import annotations

import json

import numpy as np
import pytest

from translog import __version__
from translog.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, main
from translog.drain import mine_corpus, write_templates
from translog.embedder import EmbeddingTable, load_embeddings, save_embeddings

TINY = {
    "model": {"d": 32, "heads": 4, "ffn_dim": 48, "adapter_dim": 4, "head_hidden": 16},
    "train": {"epochs": 2, "batch_size": 32, "max_lr": 0.01, "eval_every": 5},
    "synth": {"source_lines": 2000, "target_lines": 2000, "normal_templates": 40},
    "experiment": {"pretrain_epochs": 2, "runs": 1, "lowres_sizes": [20, 40], "lowres_epochs": 2,
                   "lowres_source_lines": 2000, "lowres_target_lines": 2000},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def last_error(capsys) -> dict:
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "exit codes" in out and "experiment" in out
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_usage_error_exits_2():
    assert main(["parse"]) == 2


def test_full_pipeline(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    c = ["--config", tiny_config]
    assert main(["synth", "--seed", "1", "--out", str(out / "synth"), *c]) == 0
    for dom in ("source", "target"):
        log = str(out / "synth" / f"{dom}.log")
        assert main(["parse", "--input", log, "--out", str(out / f"{dom}_parse"), *c]) == 0
        assert main(["sessionize", "--input", log, "--assignments",
                     str(out / f"{dom}_parse" / "assignments.bin"),
                     "--out", str(out / f"{dom}_sess"), *c]) == 0
        assert main(["embed", "--templates", str(out / f"{dom}_parse" / "templates.json"),
                     "--out", str(out / f"{dom}_emb"), *c]) == 0
    assert main(["pretrain", "--data", str(out / "source_sess"),
                 "--embeddings", str(out / "source_emb" / "embeddings.bin"),
                 "--out", str(out / "pre"), *c]) == 0
    for mode in ("adapter", "finetune", "scratch"):
        args = ["tune", "--mode", mode, "--data", str(out / "target_sess"),
                "--embeddings", str(out / "target_emb" / "embeddings.bin"),
                "--subsample-n", "30", "--epochs", "1", "--out", str(out / mode), *c]
        if mode != "scratch":
            args += ["--from", str(out / "pre" / "model.ckpt")]
        assert main(args) == 0
    assert main(["eval", "--model", str(out / "adapter" / "model.ckpt"),
                 "--data", str(out / "target_sess"),
                 "--embeddings", str(out / "target_emb" / "embeddings.bin"),
                 "--threshold", "0.4", "--out", str(out / "eval"), *c]) == 0
    report = json.loads((out / "eval" / "report.json").read_text())
    assert report["threshold"] == 0.4 and report["tp"] + report["fn"] > 0
    tuned = json.loads((out / "adapter" / "config.resolved.json").read_text())
    assert tuned["config"]["train"]["epochs"] == 1
    for sub in ("synth", "source_parse", "target_sess", "source_emb", "pre", "adapter", "eval"):
        doc = json.loads((out / sub / "config.resolved.json").read_text())
        assert doc["version"] == __version__
    assert {p.name for p in (out / "target_sess").iterdir()} >= {"train.jsonl", "dev.jsonl",
                                                                  "test.jsonl"}


def test_missing_input_is_data_error(tmp_path, capsys):
    code = main(["parse", "--input", str(tmp_path / "nope.log"), "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA
    err = last_error(capsys)
    assert err["error"] == "data" and "nope.log" in err["message"]


def test_empty_log_is_data_error(tmp_path, capsys):
    (tmp_path / "empty.log").write_text("\n\n")
    assert main(["parse", "--input", str(tmp_path / "empty.log"), "--format", "<Content>",
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "empty corpus" in last_error(capsys)["message"]


def test_bad_config_is_config_error(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"model": {"depth": 2}}))
    code = main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert last_error(capsys)["error"] == "config"


def test_tune_without_backbone(tmp_path, capsys):
    code = main(["tune", "--mode", "adapter", "--data", str(tmp_path), "--embeddings",
                 str(tmp_path / "e.bin"), "--out", str(tmp_path / "o")])
    assert code in (EXIT_CONFIG, EXIT_DATA)
    capsys.readouterr()


def test_divergence_exit_code(tmp_path, capsys, monkeypatch):
    from translog import cli
    from translog.trainer import TrainingDivergence

    def boom(*a, **k):
        raise TrainingDivergence("non-finite loss at step 3")

    monkeypatch.setattr(cli, "run_transfer", boom)
    assert main(["experiment", "transfer", "--out", str(tmp_path)]) == EXIT_DIVERGED
    assert last_error(capsys) == {"error": "divergence", "message": "non-finite loss at step 3"}


def test_lowresource_command(tmp_path, tiny_config, capsys):
    out = tmp_path / "lr"
    assert main(["experiment", "lowresource", "--sizes", "20,40", "--repeats", "2",
                 "--arms", "scratch,adapter", "--config", tiny_config, "--out", str(out)]) == 0
    lines = (out / "lowresource.csv").read_text().splitlines()
    assert lines[0] == "size,arm,runs,mean_f1,std_f1"
    assert len(lines) == 5 and all(",2," in ln for ln in lines[1:])
    assert (out / "lowresource.png").stat().st_size > 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["config"]["experiment"]["runs"] == 2
    capsys.readouterr()


def test_lowresource_bad_arm(tmp_path, capsys):
    assert main(["experiment", "lowresource", "--arms", "magic", "--out", str(tmp_path)]) \
        == EXIT_CONFIG
    capsys.readouterr()


def test_embed_validates_external_file(tmp_path, capsys):
    templates, _ = mine_corpus(["a b", "c d e", "f"])
    write_templates(tmp_path / "t.json", templates)
    vecs = np.random.default_rng(0).standard_normal((3, 8)).astype(np.float32)
    save_embeddings(tmp_path / "ext.bin", EmbeddingTable(vecs))
    assert main(["embed", "--templates", str(tmp_path / "t.json"), "--embeddings",
                 str(tmp_path / "ext.bin"), "--out", str(tmp_path / "o")]) == 0
    assert np.array_equal(load_embeddings(tmp_path / "o" / "embeddings.bin").vectors, vecs)
    save_embeddings(tmp_path / "short.bin", EmbeddingTable(vecs[:2]))
    assert main(["embed", "--templates", str(tmp_path / "t.json"), "--embeddings",
                 str(tmp_path / "short.bin"), "--out", str(tmp_path / "o2")]) == EXIT_DATA
    assert "row count mismatch" in last_error(capsys)["message"]
