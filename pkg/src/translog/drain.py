"""Drain-style template mining with a fixed-depth prefix tree.

The tree's first level keys on token count, the next ``tree_depth - 1`` levels
on leading tokens, and leaves hold candidate templates of that length. A line
joins the most similar candidate if the similarity reaches the threshold,
otherwise it starts a new template.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

WILDCARD = "<*>"
ASSIGNMENTS_MAGIC = b"LOGASGN1"

_IP = r"(?<![\d.])\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?(?![\d.])"
_HEX = r"\b0x[0-9a-fA-F]+\b"
_NUM = r"(?<![A-Za-z0-9_.])[-+]?\d+(?:\.\d+)?(?![A-Za-z0-9_])"

MASK_PRESETS: dict[str, list[str]] = {
    "none": [],
    "generic": [_IP, _HEX, _NUM],
    "hdfs": [r"blk_-?\d+", _IP, _HEX, r"(?<=[^A-Za-z0-9])(/[\w.-]+)+", _NUM],
    "bgl": [r"core\.\d+", r"\b[RS]\d\d-M\d-N\d[-:\w]*", _IP, _HEX,
            r"(?<=[^A-Za-z0-9])(/[\w.-]+)+", _NUM],
    "thunderbird": [r"\b[a-z]+\d+(?:-\w+)*\b", _IP, _HEX,
                    r"(?<=[^A-Za-z0-9])(/[\w.-]+)+", _NUM],
}


class EmptyLineError(ValueError):
    pass


class CorpusError(ValueError):
    """Mining failed; ``errors`` holds (line_number, message) pairs, 1-based."""

    def __init__(self, message: str, errors: Sequence[tuple[int, str]] = ()):
        super().__init__(message)
        self.errors = list(errors)


@dataclass
class LogTemplate:
    id: int
    tokens: list[str]
    match_count: int = 0

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def to_dict(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "match_count": self.match_count}


@dataclass
class ParserConfig:
    tree_depth: int = 4
    similarity_threshold: float = 0.5
    max_children: int = 100
    mask_patterns: list[str] = field(default_factory=lambda: list(MASK_PRESETS["generic"]))

    def __post_init__(self):
        if self.tree_depth < 3:
            raise ValueError("tree_depth must be >= 3")
        if not 0 < self.similarity_threshold <= 1:
            raise ValueError("similarity_threshold must be in (0, 1]")
        if self.max_children < 2:
            raise ValueError("max_children must be >= 2")

    @classmethod
    def from_preset(cls, preset: str, **kwargs) -> ParserConfig:
        if preset not in MASK_PRESETS:
            raise ValueError(f"unknown mask preset {preset!r}; choose from {sorted(MASK_PRESETS)}")
        return cls(mask_patterns=list(MASK_PRESETS[preset]), **kwargs)


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.template_ids: list[int] = []


def _has_digit(token: str) -> bool:
    return any(c.isdigit() for c in token)


def similarity(template: Sequence[str], tokens: Sequence[str]) -> float:
    """Fraction of positions whose tokens agree; a template wildcard agrees with anything."""
    if len(template) != len(tokens):
        return 0.0
    if not tokens:
        return 1.0
    same = sum(1 for t, s in zip(template, tokens) if t == WILDCARD or t == s)
    return same / len(tokens)


def merge_tokens(template: Sequence[str], tokens: Sequence[str]) -> list[str]:
    return [t if t == s else WILDCARD for t, s in zip(template, tokens)]


class TemplateMiner:
    """Stateful miner; ``parse_line`` mutates, ``match`` only reads."""

    def __init__(self, config: ParserConfig | None = None):
        self.config = config or ParserConfig()
        self._masks = [re.compile(p) for p in self.config.mask_patterns]
        self.root = _Node()
        self.templates: list[LogTemplate] = []

    @property
    def prefix_levels(self) -> int:
        return self.config.tree_depth - 1

    def tokenize(self, line: str | bytes) -> list[str]:
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        text = line.strip()
        if not text:
            raise EmptyLineError("empty log line")
        for rx in self._masks:
            text = rx.sub(WILDCARD, text)
        return text.split()

    def _search_leaf(self, tokens: Sequence[str]) -> _Node | None:
        node = self.root.children.get(str(len(tokens)))
        if node is None:
            return None
        for tok in tokens[: self.prefix_levels]:
            nxt = node.children.get(tok)
            if nxt is None:
                nxt = node.children.get(WILDCARD)
            if nxt is None:
                return None
            node = nxt
        return node

    def _best_match(self, leaf: _Node | None, tokens: Sequence[str]) -> LogTemplate | None:
        if leaf is None:
            return None
        best, best_sim = None, -1.0
        for tid in leaf.template_ids:  # ascending ids: strict '>' keeps the lowest on ties
            sim = similarity(self.templates[tid].tokens, tokens)
            if sim > best_sim:
                best, best_sim = self.templates[tid], sim
        if best is None or best_sim < self.config.similarity_threshold:
            return None
        return best

    def _insert(self, template: LogTemplate) -> None:
        tokens = template.tokens
        node = self.root.children.setdefault(str(len(tokens)), _Node())
        limit = self.config.max_children
        for tok in tokens[: self.prefix_levels]:
            if tok in node.children:
                node = node.children[tok]
                continue
            if tok == WILDCARD or _has_digit(tok):
                key = WILDCARD
            else:
                literal = sum(1 for k in node.children if k != WILDCARD)
                # keep one slot for the catch-all child
                key = tok if literal < limit - 1 else WILDCARD
            node = node.children.setdefault(key, _Node())
        node.template_ids.append(template.id)

    def parse_tokens(self, tokens: list[str]) -> int:
        match = self._best_match(self._search_leaf(tokens), tokens)
        if match is None:
            match = LogTemplate(len(self.templates), list(tokens), 0)
            self.templates.append(match)
            self._insert(match)
        else:
            match.tokens = merge_tokens(match.tokens, tokens)
        match.match_count += 1
        return match.id

    def parse_line(self, line: str | bytes) -> int:
        return self.parse_tokens(self.tokenize(line))

    def match(self, line: str | bytes) -> int | None:
        """Template id for ``line`` against the current table without learning from it."""
        tokens = self.tokenize(line)
        hit = self._best_match(self._search_leaf(tokens), tokens)
        return None if hit is None else hit.id


def parse_line(line: str | bytes, state: TemplateMiner) -> tuple[int, TemplateMiner]:
    return state.parse_line(line), state


def mine_corpus(lines: Iterable[str | bytes],
                config: ParserConfig | None = None) -> tuple[list[LogTemplate], list[int]]:
    """Mine templates from ``lines``; returns the template table and one id per line."""
    miner = TemplateMiner(config)
    assignments: list[int] = []
    errors: list[tuple[int, str]] = []
    seen = 0
    for lineno, line in enumerate(lines, start=1):
        seen += 1
        try:
            assignments.append(miner.parse_line(line))
        except EmptyLineError as exc:
            errors.append((lineno, str(exc)))
    if seen == len(errors):
        raise CorpusError("empty corpus", errors)
    if errors:
        detail = ", ".join(f"line {n}: {m}" for n, m in errors[:5])
        raise CorpusError(f"{len(errors)} unparseable line(s): {detail}", errors)
    return miner.templates, assignments


# ---------------------------------------------------------------------------
# file formats


def write_templates(path: str | Path, templates: Sequence[LogTemplate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([t.to_dict() for t in templates], fh, indent=1)
        fh.write("\n")


def read_templates(path: str | Path) -> list[LogTemplate]:
    with open(path, encoding="utf-8") as fh:
        rows = json.load(fh)
    return [LogTemplate(int(r["id"]), list(r["tokens"]), int(r["match_count"])) for r in rows]


def write_assignments(path: str | Path, assignments: Sequence[int]) -> None:
    with open(path, "wb") as fh:
        fh.write(ASSIGNMENTS_MAGIC)
        fh.write(struct.pack("<I", len(assignments)))
        fh.write(struct.pack(f"<{len(assignments)}I", *assignments))


def read_assignments(path: str | Path) -> list[int]:
    raw = Path(path).read_bytes()
    if raw[:8] != ASSIGNMENTS_MAGIC or len(raw) < 12:
        raise ValueError(f"{path}: not an assignments file")
    (count,) = struct.unpack_from("<I", raw, 8)
    if len(raw) != 12 + 4 * count:
        raise ValueError(f"{path}: expected {count} entries, file size disagrees")
    return list(struct.unpack_from(f"<{count}I", raw, 12))
