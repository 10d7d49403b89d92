"""Seeded synthetic log corpora with injected anomaly bursts.

Two domains built by ``paired_domains`` share anomaly classes but no literal
tokens: templates carry shared operation stems with a domain-specific ending
("terminated" vs "terminating") next to filler words drawn from disjoint
syllable inventories. Lines use the ``<Label> <Timestamp> <Content>`` layout
with ``-`` as the normal label and the class name otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SLOTS = ("{num}", "{hex}", "{ip}")

# class -> stems; each domain renders a stem with its own ending
ANOMALY_CLASSES: dict[str, tuple[str, ...]] = {
    "unusual_end_of_program": ("terminat", "abort", "exit"),
    "program_not_running": ("halt", "stall", "suspend"),
    "hardware_failure": ("overheat", "fault", "malfunction"),
    "memory_error": ("corrupt", "overflow", "leak"),
    "network_error": ("disconnect", "refus", "drop"),
}

# routine operations, shared by every domain the same way anomaly stems are
NORMAL_STEMS: tuple[str, ...] = (
    "start", "complet", "connect", "receiv", "open", "clos", "load", "schedul",
    "allocat", "regist", "validat", "updat", "finish", "creat", "deliver", "stor",
    "mount", "synchroniz", "replicat", "authenticat",
)

_SYLLABLES = {
    "source": ["ka", "lo", "mi", "ne", "ru", "ta", "vo", "bi", "se", "do", "fu", "ga"],
    "target": ["zy", "pe", "qua", "wix", "jo", "hu", "cre", "yl", "oth", "bly", "ux", "smo"],
}
_ENDINGS = {"source": "ed", "target": "ing"}
BASE_TIMESTAMP = 1_117_838_570


class SynthConfigError(ValueError):
    pass


@dataclass
class DomainSpec:
    name: str
    vocab: list[list[str]]
    normal_patterns: list[list[str]]
    anomaly_patterns: list[tuple[str, list[str]]]
    anomaly_rate: float = 0.05
    seed: int = 0
    normal_weights: list[float] | None = None
    class_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.anomaly_rate < 1:
            raise SynthConfigError(f"anomaly_rate must be in [0, 1), got {self.anomaly_rate}")
        if len(self.normal_patterns) < 2 or len(self.anomaly_patterns) < 1:
            raise SynthConfigError("need at least 2 normal patterns and 1 anomaly pattern")
        unknown = {c for c, _ in self.anomaly_patterns} - set(ANOMALY_CLASSES)
        if unknown:
            raise SynthConfigError(f"anomaly classes not in the shared registry: {sorted(unknown)}")

    @property
    def classes(self) -> list[str]:
        return sorted({c for c, _ in self.anomaly_patterns})

    def literal_vocab(self) -> set[str]:
        pats = self.normal_patterns + [p for _, p in self.anomaly_patterns]
        return {t for p in pats for t in p if t not in SLOTS}


def burst_start_probability(anomaly_rate: float) -> float:
    """Per-position burst start probability giving ``anomaly_rate`` anomalous lines.

    Bursts have length uniform on {1, 2, 3} (mean 2); a renewal argument gives a
    long-run anomalous fraction of 2q / (1 + q).
    """
    return anomaly_rate / (2 - anomaly_rate)


def _render(pattern: Sequence[str], rng: np.random.Generator) -> str:
    out = []
    for tok in pattern:
        if tok == "{num}":
            out.append(str(int(rng.integers(0, 100000))))
        elif tok == "{hex}":
            out.append(f"0x{int(rng.integers(0, 2**32)):08x}")
        elif tok == "{ip}":
            a, b, c, d = rng.integers(1, 255, size=4)
            out.append(f"{a}.{b}.{c}.{d}")
        else:
            out.append(tok)
    return " ".join(out)


def generate(spec: DomainSpec, num_lines: int) -> tuple[list[str], list[str | None]]:
    """Labeled raw lines plus per-line ground truth (anomaly class or None)."""
    if num_lines < 1:
        raise SynthConfigError("num_lines must be >= 1")
    rng = np.random.default_rng([spec.seed, 0x5E55])
    q = burst_start_probability(spec.anomaly_rate)
    nw = np.asarray(spec.normal_weights or [1.0] * len(spec.normal_patterns), float)
    nw = nw / nw.sum()
    aw = np.asarray([spec.class_weights.get(c, 1.0) for c, _ in spec.anomaly_patterns], float)
    aw = aw / aw.sum()

    truth: list[str | None] = []
    events: list[int] = []  # >= 0 normal pattern index, < 0 anomaly pattern -(i + 1)
    while len(truth) < num_lines:
        if q > 0 and rng.random() < q:
            length = int(rng.integers(1, 4))
            k = int(rng.choice(len(aw), p=aw))
            for _ in range(min(length, num_lines - len(truth))):
                truth.append(spec.anomaly_patterns[k][0])
                events.append(-(k + 1))
        else:
            truth.append(None)
            events.append(int(rng.choice(len(nw), p=nw)))

    lines = []
    for i, (ev, cls) in enumerate(zip(events, truth)):
        pattern = spec.normal_patterns[ev] if ev >= 0 else spec.anomaly_patterns[-ev - 1][1]
        label = "-" if cls is None else cls
        lines.append(f"{label} {BASE_TIMESTAMP + i} {_render(pattern, rng)}")
    return lines, truth


def expected_anomalous_moments(anomaly_rate: float, num_lines: int) -> tuple[float, float]:
    """Exact mean and variance of the anomalous-line count under the burst process.

    Recursion over remaining positions n, starting outside a burst:
    X(n) = X(n-1) w.p. 1-q, else min(L, n) + X(n-L) with L uniform on {1,2,3}.
    """
    q = burst_start_probability(anomaly_rate)
    m = np.zeros(num_lines + 1)
    s = np.zeros(num_lines + 1)
    for n in range(1, num_lines + 1):
        mean = (1 - q) * m[n - 1]
        second = (1 - q) * s[n - 1]
        for length in (1, 2, 3):
            take = min(length, n)
            rest = n - take
            mean += q / 3 * (take + m[rest])
            second += q / 3 * (take * take + 2 * take * m[rest] + s[rest])
        m[n], s[n] = mean, second
    return float(m[num_lines]), float(s[num_lines] - m[num_lines] ** 2)


# ---------------------------------------------------------------------------
# domain construction


def _words(rng: np.random.Generator, syllables: Sequence[str], count: int,
           exclude: set[str]) -> list[str]:
    out: list[str] = []
    seen = set(exclude)
    while len(out) < count:
        n = int(rng.integers(2, 4))
        w = "".join(syllables[int(i)] for i in rng.integers(0, len(syllables), size=n))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def make_domain(name: str, style: str, classes: Sequence[str], seed: int,
                anomaly_rate: float = 0.05, num_normal: int = 150, variants: int = 2,
                filler: int = 1,
                class_weights: dict[str, float] | None = None,
                exclude: set[str] = frozenset()) -> DomainSpec:
    """Build a domain whose surface vocabulary comes from the ``style`` inventory."""
    if style not in _SYLLABLES:
        raise SynthConfigError(f"unknown style {style!r}")
    if filler < 1 or num_normal < 2:
        raise SynthConfigError("need filler >= 1 and num_normal >= 2")
    rng = np.random.default_rng([seed, 0xD0])
    syl, ending = _SYLLABLES[style], _ENDINGS[style]
    stem_forms = {s + ending for c in classes for s in ANOMALY_CLASSES[c]}
    stem_forms |= {s + ending for s in NORMAL_STEMS}
    words = _words(rng, syl, filler * (num_normal + variants * len(classes)),
                   set(exclude) | stem_forms)
    it = iter(words)

    normal = []
    for _ in range(num_normal):
        n_stems = int(rng.integers(1, 3))
        slots = int(rng.integers(0, 2))
        pat = [next(it) for _ in range(filler)]
        for stem in rng.choice(NORMAL_STEMS, size=n_stems, replace=False):
            pat.insert(int(rng.integers(1, len(pat) + 1)), str(stem) + ending)
        for _ in range(slots):
            pat.insert(int(rng.integers(1, len(pat) + 1)), SLOTS[int(rng.integers(0, len(SLOTS)))])
        normal.append(pat)

    anomalies = []
    for cls in classes:
        stems = ANOMALY_CLASSES[cls]
        for v in range(variants):
            a, b = stems[v % len(stems)], stems[(v + 1) % len(stems)]
            pat = [next(it) for _ in range(filler)]
            pat[1:1] = [a + ending, b + ending, "{num}"]
            anomalies.append((cls, pat))

    weights = 1.0 / np.arange(1, num_normal + 1) ** 0.5
    return DomainSpec(name, [list(words), sorted(stem_forms)], normal, anomalies,
                      anomaly_rate, seed, list(weights), dict(class_weights or {}))


def paired_domains(shared_classes: Sequence[str], seeds: tuple[int, int] = (1, 2),
                   anomaly_rate: float = 0.05,
                   target_class_weights: dict[str, float] | None = None,
                   num_normal: int = 150) -> tuple[DomainSpec, DomainSpec]:
    """Source and target domains sharing ``shared_classes`` with disjoint literal vocabularies."""
    if len(shared_classes) < 2:
        raise SynthConfigError("need at least 2 shared anomaly classes")
    source = make_domain("source", "source", shared_classes, seeds[0], anomaly_rate, num_normal)
    target = make_domain("target", "target", shared_classes, seeds[1], anomaly_rate, num_normal,
                         class_weights=target_class_weights, exclude=source.literal_vocab())
    overlap = source.literal_vocab() & target.literal_vocab()
    if overlap:
        raise SynthConfigError(f"domain vocabularies overlap: {sorted(overlap)[:5]}")
    return source, target


def pattern_corpus(num_patterns: int = 10, num_lines: int = 1000,
                   seed: int = 0) -> tuple[list[str], list[int]]:
    """Unlabeled lines from ``num_patterns`` fixed patterns that pairwise differ
    in more than half their token positions; returns lines and generating ids."""
    rng = np.random.default_rng([seed, 0xC0])
    words = _words(rng, _SYLLABLES["source"] + _SYLLABLES["target"], 6 * num_patterns, set())
    it = iter(words)
    patterns = []
    for _ in range(num_patterns):
        pat = [next(it) for _ in range(5)]
        pat.insert(int(rng.integers(1, 5)), SLOTS[int(rng.integers(0, len(SLOTS)))])
        patterns.append(pat)
    ids = [int(i) for i in rng.integers(0, num_patterns, size=num_lines)]
    return [_render(patterns[i], rng) for i in ids], ids


def write_corpus(out_dir: str | Path, name: str, lines: Sequence[str],
                 truth: Sequence[str | None]) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"{name}.log"
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    gt_path = out / f"{name}.ground_truth.jsonl"
    with open(gt_path, "w", encoding="utf-8") as fh:
        for i, cls in enumerate(truth):
            fh.write(json.dumps({"index": i, "anomaly_class": cls}) + "\n")
    return log_path, gt_path


def anomaly_sigma_bound(count: int, anomaly_rate: float, num_lines: int, k: float = 4.0) -> bool:
    mean, var = expected_anomalous_moments(anomaly_rate, num_lines)
    return abs(count - mean) <= k * math.sqrt(var)
