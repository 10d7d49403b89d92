"""JSON pipeline configuration with strict key checking.

Every section maps onto a dataclass; missing keys take the dataclass default
and unknown keys are rejected. ``PipelineConfig.to_dict`` gives the resolved
document that the CLI writes next to every artifact.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .drain import MASK_PRESETS, ParserConfig
from .experiments import ExperimentSettings
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ParserSection:
    preset: str = "generic"
    tree_depth: int = 4
    similarity_threshold: float = 0.5
    max_children: int = 100
    # explicit patterns replace the preset's list
    mask_patterns: list[str] | None = None

    def build(self) -> ParserConfig:
        if self.preset not in MASK_PRESETS:
            raise ConfigError(f"unknown mask preset {self.preset!r}; choose from {sorted(MASK_PRESETS)}")
        patterns = self.mask_patterns if self.mask_patterns is not None else MASK_PRESETS[self.preset]
        return ParserConfig(self.tree_depth, self.similarity_threshold, self.max_children,
                            list(patterns))


@dataclass
class SessionizerSection:
    line_format: str = "<Label> <Timestamp> <Content>"
    window_size: int = 20
    group_pattern: str | None = None
    train_fraction: float = 0.8
    dev_fraction: float = 0.1


@dataclass
class EmbedderSection:
    seed: int = 17


@dataclass
class EvalSection:
    threshold: float = 0.5
    f1_target: float = 0.9


@dataclass
class SynthSection:
    source_lines: int = 20000
    target_lines: int = 20000
    anomaly_rate: float = 0.05
    shared_classes: list[str] = field(default_factory=lambda: [
        "unusual_end_of_program", "program_not_running", "hardware_failure", "memory_error"])
    target_class_weights: dict[str, float] = field(default_factory=lambda: {
        "hardware_failure": 0.05, "memory_error": 0.05})
    normal_templates: int = 150


@dataclass
class ExperimentSection:
    pretrain_epochs: int = 20
    runs: int = 3
    lowres_sizes: list[int] = field(default_factory=lambda: [250, 500, 1000, 2500])
    lowres_source_lines: int = 80000
    lowres_target_lines: int = 80000
    lowres_epochs: int = 30


def _desk_model() -> ModelConfig:
    return ExperimentSettings().model


def _desk_train() -> TrainConfig:
    return ExperimentSettings().train


SECTIONS = {
    "parser": ParserSection,
    "sessionizer": SessionizerSection,
    "embedder": EmbedderSection,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalSection,
    "synth": SynthSection,
    "experiment": ExperimentSection,
}


@dataclass
class PipelineConfig:
    parser: ParserSection = field(default_factory=ParserSection)
    sessionizer: SessionizerSection = field(default_factory=SessionizerSection)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    model: ModelConfig = field(default_factory=_desk_model)
    train: TrainConfig = field(default_factory=_desk_train)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSection = field(default_factory=SynthSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> PipelineConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {unknown}")
        base = cls()
        built = {}
        for name, kind in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            names = {f.name for f in dataclasses.fields(kind)}
            bad = sorted(set(section) - names)
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {bad}")
            merged = {**asdict(getattr(base, name)), **section}
            try:
                built[name] = kind(**merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name!r} section: {exc}") from exc
        cfg = cls(**built)
        cfg.parser.build()  # surface preset and pattern errors early
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> PipelineConfig:
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def override(self, section: str, **values: Any) -> PipelineConfig:
        """Copy with some fields of one section replaced (used for CLI flags)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        doc = self.to_dict()
        doc[section].update(values)
        return PipelineConfig.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def write_resolved(self, out_dir: str | Path, command: str = "") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"version": __version__, "command": command, "config": self.to_dict()}
        path = out / "config.resolved.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def experiment_settings(self) -> ExperimentSettings:
        s, x = self.synth, self.experiment
        return ExperimentSettings(
            model=self.model, train=self.train, pretrain_epochs=x.pretrain_epochs,
            source_lines=s.source_lines, target_lines=s.target_lines,
            anomaly_rate=s.anomaly_rate, shared_classes=tuple(s.shared_classes),
            target_class_weights=dict(s.target_class_weights),
            normal_templates=s.normal_templates,
            window_size=self.sessionizer.window_size,
            train_fraction=self.sessionizer.train_fraction,
            dev_fraction=self.sessionizer.dev_fraction,
            embed_seed=self.embedder.seed, parser=self.parser.build(),
            f1_target=self.eval.f1_target, runs=x.runs,
            lowres_sizes=tuple(x.lowres_sizes), lowres_source_lines=x.lowres_source_lines,
            lowres_target_lines=x.lowres_target_lines,
            lowres_epochs=x.lowres_epochs)
