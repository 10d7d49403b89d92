"""Training loop and the two-stage pipeline (pretrain, then adapter tuning).

Randomness comes from named streams of ``TrainConfig.seed``: ``init`` for fresh
weights, ``adapters``/``head`` for parameters added before tuning, ``shuffle``
for batch order and ``dropout`` for dropout masks.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_model, params_digest
from .embedder import SessionArrays
from .evaluator import evaluate
from .model import MODES, ModelConfig, TransLog
from .seeding import derive_rng
from .sessionizer import Session, label_counts

log = logging.getLogger(__name__)

REFERENCE_MAX_LRS = (1e-5, 5e-5, 1e-6)


class TrainingDivergence(RuntimeError):
    pass


class IncompatibleBackbone(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_lr: float = 5e-5
    epochs: int = 30
    seed: int = 0
    mode: str = "scratch"
    eval_every: int = 50
    patience: int | None = None
    threshold: float = 0.5
    warmup_fraction: float = 0.3
    start_div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.epochs < 0 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0 and eval_every >= 1")
        if self.max_lr not in REFERENCE_MAX_LRS:
            log.debug("max_lr=%g is outside the reference grid %s", self.max_lr, REFERENCE_MAX_LRS)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunMetrics:
    losses: list[tuple[int, float]] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    trainable_params: int = 0

    def steps_to_f1(self, target: float = 0.9, split: str = "dev") -> int | None:
        for e in self.evals:
            if e["split"] == split and e["f1"] >= target:
                return e["step"]
        return None

    def final(self, split: str = "dev") -> dict | None:
        rows = [e for e in self.evals if e["split"] == split]
        return rows[-1] if rows else None

    def best_f1(self, split: str = "dev") -> float:
        return max((e["f1"] for e in self.evals if e["split"] == split), default=0.0)

    def write_jsonl(self, path: str | Path) -> None:
        """Eval points only; wall-clock timings are left out so reruns are byte-identical."""
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.evals:
                fh.write(json.dumps(e, sort_keys=True) + "\n")


def split_dev(train: Sequence[Session], dev_fraction: float = 0.1) -> tuple[list[Session], list[Session]]:
    """Last ``dev_fraction`` of the (chronological) training split becomes the dev set."""
    n_dev = max(1, int(round(len(train) * dev_fraction))) if len(train) > 1 else 0
    cut = len(train) - n_dev
    return list(train[:cut]), list(train[cut:])


def subsample(train: Sequence[Session], n: int, seed: int) -> list[Session]:
    """Uniform sample of ``n`` sessions without replacement, kept in original order."""
    if n <= 0:
        raise ValueError("empty training set: n must be >= 1")
    if n > len(train):
        raise ValueError(f"cannot draw {n} sessions from {len(train)}")
    idx = np.sort(derive_rng(seed, "subsample").choice(len(train), size=n, replace=False))
    picked = [train[i] for i in idx]
    log.info("subsample n=%d labels=%s", n, label_counts(picked))
    return picked


def batch_loss(model: TransLog, data: SessionArrays, batch_size: int = 256) -> float:
    """Mean BCE over ``data`` evaluated without dropout."""
    total = 0.0
    for i in range(0, len(data), batch_size):
        probs = model.forward(data.x[i:i + batch_size], data.mask[i:i + batch_size])
        total += float(ad.bce_loss(probs, data.y[i:i + batch_size]).data) * len(probs.data)
    return total / max(len(data), 1)


def _eval_point(model: TransLog, data: SessionArrays, step: int, split: str,
                threshold: float) -> dict:
    probs = model.predict(data.x, data.mask)
    rep = evaluate(probs, data.y.astype(bool), threshold)
    eps = 1e-7
    p = np.clip(probs.astype(np.float64), eps, 1 - eps)
    y = data.y.astype(np.float64)
    loss = float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())
    return {"step": step, "split": split, "loss": round(loss, 8),
            "precision": rep.precision, "recall": rep.recall, "f1": rep.f1}


def train(model: TransLog, train_data: SessionArrays, dev_data: SessionArrays | None,
          cfg: TrainConfig) -> RunMetrics:
    """Mini-batch Adam under a one-cycle schedule; mutates ``model`` in place."""
    n = len(train_data)
    if n == 0:
        raise ValueError("empty training set")
    if len(np.unique(train_data.y)) < 2:
        warnings.warn("training data contains a single class", RuntimeWarning, stacklevel=2)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    schedule = ad.OneCycleSchedule(cfg.max_lr, max(total, 1), cfg.warmup_fraction,
                                   cfg.start_div, cfg.final_div)
    opt = ad.Adam(model.params, model.trainable_names(), beta1=0.9, beta2=0.99, eps=1e-8)
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    dropout_rng = derive_rng(cfg.seed, "dropout")
    metrics = RunMetrics(trainable_params=model.num_trainable())

    step = 0
    if dev_data is not None and len(dev_data):
        metrics.evals.append(_eval_point(model, dev_data, 0, "dev", cfg.threshold))
    best, stale = -1.0, 0
    for _ in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            opt.zero_grad()
            probs = model.forward(train_data.x[idx], train_data.mask[idx], train=True, rng=dropout_rng)
            loss = ad.bce_loss(probs, train_data.y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergence(f"non-finite loss at step {step}")
            loss.backward()
            opt.step(schedule.lr_at(step))
            step += 1
            metrics.losses.append((step, value))
            if dev_data is not None and len(dev_data) and step % cfg.eval_every == 0:
                metrics.evals.append(_eval_point(model, dev_data, step, "dev", cfg.threshold))
        metrics.epoch_seconds.append(time.perf_counter() - t0)
        if dev_data is None or not len(dev_data):
            continue
        if metrics.evals[-1]["step"] != step:
            metrics.evals.append(_eval_point(model, dev_data, step, "dev", cfg.threshold))
        f1 = metrics.evals[-1]["f1"]
        if f1 > best:
            best, stale = f1, 0
        else:
            stale += 1
        if cfg.patience is not None and stale >= cfg.patience:
            log.info("early stop at step %d (dev f1 %.4f)", step, best)
            break
    return metrics


# ---------------------------------------------------------------------------
# pipeline stages


def _clone(model: TransLog) -> TransLog:
    params = {n: ad.Tensor(t.data.copy()) for n, t in model.params.items()}
    return TransLog(model.config, params, "finetune" if model.mode == "adapter" else model.mode)


def _resolve_backbone(backbone: TransLog | str | Path,
                      model_config: ModelConfig | None) -> TransLog:
    if isinstance(backbone, (str, Path)):
        try:
            model, _ = load_model(backbone, mode="finetune")
        except CheckpointError as exc:
            raise IncompatibleBackbone(f"incompatible backbone: {exc}") from exc
    else:
        model = _clone(backbone)
    if model_config is not None and model_config.backbone_hash() != model.config.backbone_hash():
        raise IncompatibleBackbone(
            f"incompatible backbone: checkpoint hash {model.config.backbone_hash()} "
            f"!= config hash {model_config.backbone_hash()}")
    if model_config is not None:
        model.config = model_config
    model.drop_adapters()
    return model


def pretrain(train_data: SessionArrays, dev_data: SessionArrays | None, cfg: TrainConfig,
             model_config: ModelConfig) -> tuple[TransLog, RunMetrics]:
    """Full supervised training without adapters (the source-domain stage)."""
    cfg = _with_mode(cfg, "scratch")
    model = TransLog.initialize(model_config, derive_rng(cfg.seed, "init"), "scratch")
    return model, train(model, train_data, dev_data, cfg)


def train_from_scratch(train_data: SessionArrays, dev_data: SessionArrays | None,
                       cfg: TrainConfig, model_config: ModelConfig) -> tuple[TransLog, RunMetrics]:
    return pretrain(train_data, dev_data, cfg, model_config)


def adapter_tune(backbone: TransLog | str | Path, train_data: SessionArrays,
                 dev_data: SessionArrays | None, cfg: TrainConfig,
                 model_config: ModelConfig | None = None,
                 reinit_head: bool = True) -> tuple[TransLog, RunMetrics]:
    """Insert fresh adapters into a copy of ``backbone`` and train adapters, norms and head.

    Attention and feed-forward weights stay bit-identical; the input backbone
    (object or checkpoint file) is never modified.
    """
    model = _resolve_backbone(backbone, model_config)
    frozen_before = params_digest(model.params, model.backbone_names())
    model.add_adapters(derive_rng(cfg.seed, "adapters"))
    if reinit_head:
        model.reinit_head(derive_rng(cfg.seed, "head"))
    model.set_mode("adapter")
    metrics = train(model, train_data, dev_data, _with_mode(cfg, "adapter"))
    if params_digest(model.params, model.backbone_names()) != frozen_before:
        raise AssertionError("frozen backbone changed during adapter tuning")
    return model, metrics


def fine_tune(backbone: TransLog | str | Path, train_data: SessionArrays,
              dev_data: SessionArrays | None, cfg: TrainConfig,
              model_config: ModelConfig | None = None,
              reinit_head: bool = False) -> tuple[TransLog, RunMetrics]:
    """Update every parameter of a copy of ``backbone``; no adapters."""
    model = _resolve_backbone(backbone, model_config)
    if reinit_head:
        model.reinit_head(derive_rng(cfg.seed, "head"))
    model.set_mode("finetune")
    return model, train(model, train_data, dev_data, _with_mode(cfg, "finetune"))


def _with_mode(cfg: TrainConfig, mode: str) -> TrainConfig:
    d = cfg.to_dict()
    d["mode"] = mode
    return TrainConfig(**d)
