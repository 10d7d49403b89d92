"""Experiment harness: paired synthetic domains through the whole pipeline.

``run_transfer`` pretrains on the source domain and trains scratch, fine-tune
and adapter arms on the target; ``run_lowresource`` repeats the target arms on
subsampled training sets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_model
from .drain import ParserConfig, mine_corpus
from .embedder import EmbeddingTable, SessionArrays, hashed_table, materialize_all
from .evaluator import evaluate
from .logformat import SYNTH_FORMAT, LineFormat, is_alert
from .model import ModelConfig, TransLog, count_params
from .plotting import convergence_plot, lowresource_plot
from .sessionizer import Session, chrono_split, labeled_lines, window_sessions
from .synth import generate, paired_domains
from .trainer import (RunMetrics, TrainConfig, adapter_tune, fine_tune, pretrain,
                      split_dev, subsample, train_from_scratch)

log = logging.getLogger(__name__)

ARMS = ("scratch", "finetune", "adapter")


@dataclass
class DomainData:
    name: str
    templates: list[list[str]]
    table: EmbeddingTable
    train: list[Session]
    dev: list[Session]
    test: list[Session]
    fingerprint: str = ""

    def arrays(self, sessions: list[Session], l: int) -> SessionArrays:  # noqa: E741
        return materialize_all(sessions, self.table, l)


@dataclass
class ExperimentSettings:
    """Everything an experiment needs besides the seed."""

    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        d=128, heads=8, layers=1, ffn_dim=256, adapter_dim=16, head_hidden=32, l=20, dropout=0.1))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=64, max_lr=1e-2, epochs=10, eval_every=5))
    pretrain_epochs: int = 20
    source_lines: int = 20000
    target_lines: int = 20000
    anomaly_rate: float = 0.05
    shared_classes: tuple[str, ...] = ("unusual_end_of_program", "program_not_running",
                                       "hardware_failure", "memory_error")
    # two shared classes are rare on the target side
    target_class_weights: dict[str, float] = field(default_factory=lambda: {
        "hardware_failure": 0.05, "memory_error": 0.05})
    normal_templates: int = 150
    window_size: int = 20
    train_fraction: float = 0.8
    dev_fraction: float = 0.1
    embed_seed: int = 17
    parser: ParserConfig = field(default_factory=ParserConfig)
    f1_target: float = 0.9
    runs: int = 3
    lowres_sizes: tuple[int, ...] = (250, 500, 1000, 2500)
    lowres_source_lines: int = 80000
    lowres_target_lines: int = 80000
    lowres_epochs: int = 30

    def to_dict(self) -> dict:
        return asdict(self)


def prepare_domain(name: str, lines: list[str], settings: ExperimentSettings) -> DomainData:
    """Parse, window, split and embed one labeled corpus."""
    fmt = LineFormat.parse(SYNTH_FORMAT)
    rows = [fmt.split(ln) for ln in lines]
    templates, assignments = mine_corpus([r["Content"] for r in rows], settings.parser)
    labels = [is_alert(r["Label"]) for r in rows]
    sessions = window_sessions(labeled_lines(assignments, labels), settings.window_size, name)
    train, test = chrono_split(sessions, settings.train_fraction)
    train, dev = split_dev(train, settings.dev_fraction)
    toks = [t.tokens for t in templates]
    table = hashed_table(toks, settings.model.d, settings.embed_seed)
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(table.vectors).tobytes())
    for s in sessions:
        digest.update(repr((s.template_ids, s.label)).encode())
    return DomainData(name, toks, table, train, dev, test, digest.hexdigest()[:16])


def synthetic_pair(settings: ExperimentSettings, seed: int, source_lines: int | None = None,
                   target_lines: int | None = None) -> tuple[DomainData, DomainData]:
    source_spec, target_spec = paired_domains(
        list(settings.shared_classes), (seed * 2 + 1, seed * 2 + 2), settings.anomaly_rate,
        settings.target_class_weights or None, settings.normal_templates)
    src_lines, _ = generate(source_spec, source_lines or settings.source_lines)
    tgt_lines, _ = generate(target_spec, target_lines or settings.target_lines)
    return (prepare_domain("source", src_lines, settings),
            prepare_domain("target", tgt_lines, settings))


def _train_cfg(settings: ExperimentSettings, seed: int, **overrides) -> TrainConfig:
    d = settings.train.to_dict()
    d["seed"] = seed
    d.update(overrides)
    return TrainConfig(**d)


def run_arm(arm: str, backbone: TransLog | None, train: SessionArrays, dev: SessionArrays | None,
            settings: ExperimentSettings, seed: int, **overrides) -> tuple[TransLog, RunMetrics]:
    cfg = _train_cfg(settings, seed, **overrides)
    if arm == "scratch":
        return train_from_scratch(train, dev, cfg, settings.model)
    if backbone is None:
        raise ValueError(f"arm {arm!r} needs a pretrained backbone")
    if arm == "finetune":
        return fine_tune(backbone, train, dev, cfg, settings.model)
    if arm == "adapter":
        return adapter_tune(backbone, train, dev, cfg, settings.model)
    raise ValueError(f"unknown arm {arm!r}")


def score_f1(model: TransLog, data: SessionArrays, threshold: float = 0.5) -> float:
    return evaluate(model.predict(data.x, data.mask), data.y.astype(bool), threshold).f1


def summarize(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    return statistics.fmean(values), (statistics.stdev(values) if len(values) > 1 else 0.0)


def reference_counts(layers: int) -> dict[str, int]:
    """Trainable counts at the full-size geometry (d=768, ffn=3072, m=128, head 256)."""
    cfg = ModelConfig(layers=layers)
    return {mode: count_params(cfg, mode) for mode in ("finetune", "adapter")}


def _median_steps(values: list[int | None]) -> float | None:
    finite = [math.inf if v is None else v for v in values]
    med = statistics.median(finite) if finite else math.inf
    return None if math.isinf(med) else med


def pretrain_source(source: DomainData, settings: ExperimentSettings,
                    seed: int) -> tuple[TransLog, RunMetrics]:
    l = settings.model.l  # noqa: E741
    cfg = _train_cfg(settings, seed, epochs=settings.pretrain_epochs)
    return pretrain(source.arrays(source.train, l), source.arrays(source.dev, l), cfg,
                    settings.model)


def run_transfer(settings: ExperimentSettings, seed: int, out_dir: str | Path) -> dict:
    """Pretrain on the source domain, then train every arm on the target for
    ``settings.runs`` seeds. Writes metrics.jsonl, transfer.csv, summary.json,
    backbone.ckpt and convergence.png into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    l = settings.model.l  # noqa: E741
    source, target = synthetic_pair(settings, seed)
    backbone, pre_metrics = pretrain_source(source, settings, seed)
    save_model(out / "backbone.ckpt", backbone, seed=seed, step=len(pre_metrics.losses))
    log.info("pretrain: source dev f1 %.4f", pre_metrics.final()["f1"])

    train, dev, test = (target.arrays(s, l) for s in (target.train, target.dev, target.test))
    eval_rows = [dict(e, arm="pretrain", run_seed=seed) for e in pre_metrics.evals]
    runs, curves = [], {}
    for r in range(settings.runs):
        run_seed = seed + r
        for arm in ARMS:
            model, metrics = run_arm(arm, backbone, train, dev, settings, run_seed)
            eval_rows += [dict(e, arm=arm, run_seed=run_seed) for e in metrics.evals]
            if r == 0:
                curves[arm] = [(e["step"], e["f1"]) for e in metrics.evals]
            runs.append({
                "arm": arm, "seed": run_seed,
                "steps_to_f1": metrics.steps_to_f1(settings.f1_target),
                "final_dev_f1": metrics.final()["f1"],
                "best_dev_f1": metrics.best_f1(),
                "test_f1": score_f1(model, test, settings.train.threshold),
                "trainable_params": metrics.trainable_params,
            })
            log.info("%s seed=%d steps_to_f1=%s test_f1=%.4f", arm, run_seed,
                     runs[-1]["steps_to_f1"], runs[-1]["test_f1"])

    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in eval_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(out / "transfer.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(runs[0]))
        writer.writeheader()
        for row in runs:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})

    arms = {}
    for arm in ARMS:
        rows = [r for r in runs if r["arm"] == arm]
        mean, std = summarize([r["test_f1"] for r in rows])
        arms[arm] = {
            "median_steps_to_f1": _median_steps([r["steps_to_f1"] for r in rows]),
            "min_final_dev_f1": min(r["final_dev_f1"] for r in rows),
            "mean_test_f1": mean, "std_test_f1": std,
            "trainable_params": rows[0]["trainable_params"],
        }
    summary = {
        "seed": seed,
        "f1_target": settings.f1_target,
        "fingerprints": {"source": source.fingerprint, "target": target.fingerprint},
        "templates": {"source": len(source.templates), "target": len(target.templates)},
        "sessions": {d.name: {"train": len(d.train), "dev": len(d.dev), "test": len(d.test)}
                     for d in (source, target)},
        "pretrain": {"final_dev_f1": pre_metrics.final()["f1"],
                     "steps": len(pre_metrics.losses),
                     "trainable_params": pre_metrics.trainable_params},
        "arms": arms,
        "reference_counts": {str(n): reference_counts(n) for n in (1, 2, 4)},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    convergence_plot(curves, out / "convergence.png", settings.f1_target)
    return summary


def run_lowresource(settings: ExperimentSettings, seed: int, out_dir: str | Path,
                    arms: tuple[str, ...] = ARMS) -> list[dict]:
    """Test F1 of each arm on subsampled target training sets.

    Writes lowresource.csv (mean and std per size and arm), lowresource_runs.jsonl
    and lowresource.png; returns the CSV rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    l = settings.model.l  # noqa: E741
    source, target = synthetic_pair(settings, seed, settings.lowres_source_lines,
                                    settings.lowres_target_lines)
    if max(settings.lowres_sizes) > len(target.train):
        raise ValueError(f"largest size {max(settings.lowres_sizes)} exceeds the "
                         f"{len(target.train)} target training sessions")
    backbone, _ = pretrain_source(source, settings, seed)
    test = target.arrays(target.test, l)

    results = []
    for size in settings.lowres_sizes:
        for r in range(settings.runs):
            run_seed = seed + r
            train = target.arrays(subsample(target.train, size, run_seed), l)
            for arm in arms:
                model, _ = run_arm(arm, backbone, train, None, settings, run_seed,
                                   epochs=settings.lowres_epochs)
                f1 = score_f1(model, test, settings.train.threshold)
                results.append({"size": size, "arm": arm, "seed": run_seed, "test_f1": f1})
                log.info("size=%d %s seed=%d test_f1=%.4f", size, arm, run_seed, f1)

    with open(out / "lowresource_runs.jsonl", "w", encoding="utf-8") as fh:
        for row in results:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    rows = []
    for size in settings.lowres_sizes:
        for arm in arms:
            f1s = [r["test_f1"] for r in results if r["size"] == size and r["arm"] == arm]
            mean, std = summarize(f1s)
            rows.append({"size": size, "arm": arm, "runs": len(f1s),
                         "mean_f1": round(mean, 6), "std_f1": round(std, 6)})
    with open(out / "lowresource.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["size", "arm", "runs", "mean_f1", "std_f1"])
        writer.writeheader()
        writer.writerows(rows)
    lowresource_plot(rows, out / "lowresource.png")
    return rows
