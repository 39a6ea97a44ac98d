"""Reasoning-step graphs and render settings."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from imgcot.errors import ConfigError, ContractError, EmptyInputError

_DEP_LINE = re.compile(r"^\s*#dep\s+(\d+)\s*->\s*(\d+)\s*$")


@dataclass(frozen=True)
class RenderConfig:
    """Page geometry and font bounds.

    Font sizes are integer atlas scales (1 = 8px glyph cells).  The default
    scale 2 stands in for a 9pt body font.
    """

    height: int = 64
    width: int = 64
    font_size: int = 2
    min_font_size: int = 1
    max_font_size: int = 8
    delimiters: tuple = ("\n",)
    margin: int = 1
    padding: int = 0
    blank_ceiling: float = 0.5

    def __post_init__(self):
        problems = []
        if self.height <= 0 or self.width <= 0:
            problems.append("height and width must be positive")
        if not (0 < self.min_font_size <= self.font_size <= self.max_font_size):
            problems.append("font sizes must satisfy 0 < min <= default <= max")
        if not (0.0 < self.blank_ceiling <= 1.0):
            problems.append("blank_ceiling must lie in (0, 1]")
        if self.margin < 0 or self.padding < 0:
            problems.append("margin and padding must be non-negative")
        if not self.delimiters or any(not d for d in self.delimiters):
            problems.append("delimiters must be a non-empty list of non-empty strings")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "delimiters", tuple(self.delimiters))


@dataclass(frozen=True)
class SegmentGraph:
    segments: tuple
    edges: tuple = field(default=())

    def __post_init__(self):
        segs = tuple(self.segments)
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        if not segs:
            raise ContractError("a segment graph needs at least one segment")
        n = len(segs)
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ContractError(f"edge ({a}, {b}) out of range for {n} segments")
            if a == b:
                raise ContractError(f"self-edge on segment {a}")
        if len(set(edges)) != len(edges):
            raise ContractError("duplicate edges")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def chain(cls, segments) -> "SegmentGraph":
        segments = tuple(segments)
        return cls(segments, tuple((i, i + 1) for i in range(len(segments) - 1)))


def segment(text: str, config: RenderConfig | None = None) -> SegmentGraph:
    """Split ``text`` on the configured delimiters.

    Lines of the form ``#dep i->j`` are removed from the text and, when any
    are present, replace the default sequential chain of edges.
    """
    config = config or RenderConfig()
    if not text or not text.strip():
        raise EmptyInputError("cannot render empty text")
    deps = []
    kept = []
    for line in text.split("\n"):
        m = _DEP_LINE.match(line)
        if m:
            deps.append((int(m.group(1)), int(m.group(2))))
        else:
            kept.append(line)
    body = "\n".join(kept)
    pattern = "|".join(re.escape(d) for d in sorted(config.delimiters, key=len, reverse=True))
    parts = [p.strip() for p in re.split(pattern, body)]
    parts = [p for p in parts if p]
    if not parts:
        raise EmptyInputError("text contains no segments after splitting")
    if deps:
        return SegmentGraph(tuple(parts), tuple(dict.fromkeys(deps)))
    return SegmentGraph.chain(parts)
