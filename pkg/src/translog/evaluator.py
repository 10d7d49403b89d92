"""Session-level precision / recall / F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    threshold: float = 0.5
    degenerate: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float, list[str]]:
    """Metrics from counts; an empty denominator yields 0 and is flagged."""
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")
    f1 = f1_score(precision, recall)
    if precision + recall == 0:
        flags.append("f1")
    return precision, recall, f1, flags


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(probs: Sequence[float], labels: Sequence[bool], threshold: float = 0.5) -> EvalReport:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if len(probs) != len(labels):
        raise ValueError(f"length mismatch: {len(probs)} probabilities vs {len(labels)} labels")
    if len(probs) == 0:
        raise ValueError("nothing to evaluate")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    pred = probs >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    precision, recall, f1, flags = precision_recall_f1(tp, fp, fn)
    return EvalReport(tp, fp, fn, tn, precision, recall, f1, threshold, flags)
