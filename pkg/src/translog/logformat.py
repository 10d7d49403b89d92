"""Splitting raw log lines into header fields and message content.

A format string such as ``"<Label> <Timestamp> <Content>"`` names
whitespace-separated header columns; ``<Content>`` must come last and takes
the rest of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

BGL_FORMAT = "<Label> <Timestamp> <Date> <Node> <Time> <NodeRepeat> <Type> <Component> <Level> <Content>"
SYNTH_FORMAT = "<Label> <Timestamp> <Content>"
RAW_FORMAT = "<Content>"


class LineFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LineFormat:
    fields: tuple[str, ...]

    @classmethod
    def parse(cls, spec: str) -> LineFormat:
        fields = tuple(re.findall(r"<(\w+)>", spec))
        if not fields or fields[-1] != "Content":
            raise LineFormatError(f"format {spec!r} must end with <Content>")
        return cls(fields)

    def split(self, line: str) -> dict[str, str]:
        parts = line.strip().split(None, len(self.fields) - 1)
        if len(parts) < len(self.fields):
            raise LineFormatError(f"expected {len(self.fields)} fields, got {len(parts)}")
        return dict(zip(self.fields, parts))


def read_lines(path: str | Path) -> Iterator[str]:
    """Lines of a log file, undecodable bytes replaced, trailing newline stripped."""
    with open(path, "rb") as fh:
        for raw in fh:
            yield raw.decode("utf-8", errors="replace").rstrip("\r\n")


def is_alert(label: str) -> bool:
    """Alert-tag convention: ``-`` marks a normal line, anything else an alert."""
    return label != "-"
