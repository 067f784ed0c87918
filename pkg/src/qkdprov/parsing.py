"""Line-oriented parsing shared by the plain-text file formats.

All shipped file formats (topologies, requests, cost tables, scenario
overrides, shard maps, experiment configs) are whitespace-separated token
lines with ``#`` comments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator


class ParseError(ValueError):
    """Malformed input file; carries the source path and 1-based line number."""

    def __init__(self, source: str, line_no: int, message: str):
        self.source = source
        self.line_no = line_no
        super().__init__(f"{source}:{line_no}: {message}")


def iter_tokens(text: str, source: str = "<string>") -> Iterator[tuple[int, list[str]]]:
    """Yield (line_no, tokens) for every non-blank, non-comment line."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        yield line_no, line.split()


def read_tokens(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    path = Path(path)
    return iter_tokens(path.read_text(), source=str(path))


def parse_number(token: str, source: str, line_no: int, kind: type = float):
    try:
        return kind(token)
    except ValueError:
        raise ParseError(source, line_no, f"expected {kind.__name__}, got {token!r}") from None
