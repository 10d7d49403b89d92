"""Turning template-assigned log lines into labeled sessions."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)


class SessionError(ValueError):
    pass


@dataclass
class LabeledLine:
    index: int
    template_id: int
    is_anomalous: bool
    timestamp_ordinal: int = 0
    group_key: str | None = None
    content: str = ""


@dataclass
class Session:
    template_ids: list[int]
    label: bool
    domain: str = ""
    origin: int | str = 0
    first_index: int = 0

    def to_dict(self) -> dict:
        return {"template_ids": list(self.template_ids), "label": bool(self.label),
                "domain": self.domain, "origin": self.origin, "first_index": self.first_index}

    @classmethod
    def from_dict(cls, d: dict) -> Session:
        return cls(list(d["template_ids"]), bool(d["label"]), d.get("domain", ""),
                   d.get("origin", 0), int(d.get("first_index", 0)))


def labeled_lines(assignments: Sequence[int], labels: Sequence[bool],
                  contents: Sequence[str] | None = None) -> list[LabeledLine]:
    if len(assignments) != len(labels):
        raise SessionError(f"{len(assignments)} assignments but {len(labels)} labels")
    contents = contents if contents is not None else [""] * len(labels)
    return [LabeledLine(i, t, bool(y), i, content=c)
            for i, (t, y, c) in enumerate(zip(assignments, labels, contents))]


def window_sessions(lines: Sequence[LabeledLine], window_size: int = 20,
                    domain: str = "") -> list[Session]:
    """Non-overlapping windows in file order; the final partial window is kept."""
    if window_size < 1:
        raise SessionError("window_size must be >= 1")
    out = []
    for w in range(math.ceil(len(lines) / window_size)):
        chunk = lines[w * window_size:(w + 1) * window_size]
        out.append(Session([ln.template_id for ln in chunk],
                           any(ln.is_anomalous for ln in chunk),
                           domain, w, chunk[0].index))
    return out


def group_sessions(lines: Sequence[LabeledLine], key_pattern: str,
                   domain: str = "") -> list[Session]:
    """One session per group key, in order of each key's first appearance.

    The key is ``line.group_key`` when set, otherwise the first match of
    ``key_pattern`` in the line content (group 1 if the pattern has groups).
    """
    rx = re.compile(key_pattern)
    groups: dict[str, list[LabeledLine]] = {}
    skipped = 0
    for ln in lines:
        key = ln.group_key
        if key is None:
            m = rx.search(ln.content)
            key = None if m is None else (m.group(1) if rx.groups else m.group(0))
        if key is None:
            skipped += 1
            continue
        groups.setdefault(key, []).append(ln)
    if not groups:
        raise SessionError("no group keys extracted")
    if skipped:
        log.info("group_sessions: %d line(s) without a group key skipped", skipped)
    return [Session([ln.template_id for ln in members],
                    any(ln.is_anomalous for ln in members),
                    domain, key, members[0].index)
            for key, members in groups.items()]


def chrono_split(sessions: Sequence[Session],
                 train_fraction: float = 0.8) -> tuple[list[Session], list[Session]]:
    """First ``floor(n * train_fraction)`` sessions train, the rest test. No shuffling."""
    if not 0 < train_fraction < 1:
        raise SessionError("train_fraction must be in (0, 1)")
    n = len(sessions)
    if n < 2:
        raise SessionError("split impossible: need at least 2 sessions")
    ordered = sorted(sessions, key=lambda s: s.first_index)
    cut = math.floor(n * train_fraction)
    return ordered[:cut], ordered[cut:]


def truncate(session: Session, length: int) -> Session:
    if len(session.template_ids) <= length:
        return session
    return Session(session.template_ids[:length], session.label, session.domain,
                   session.origin, session.first_index)


def write_sessions(path: str | Path, sessions: Iterable[Session]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_dict(), separators=(",", ":")) + "\n")


def read_sessions(path: str | Path) -> list[Session]:
    with open(path, encoding="utf-8") as fh:
        return [Session.from_dict(json.loads(line)) for line in fh if line.strip()]


def label_counts(sessions: Iterable[Session]) -> dict[str, int]:
    pos = neg = 0
    for s in sessions:
        if s.label:
            pos += 1
        else:
            neg += 1
    return {"anomalous": pos, "normal": neg}

