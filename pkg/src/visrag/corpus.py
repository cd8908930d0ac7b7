"""Chunk API documentation and example scripts into retrievable units.

Two kinds of source file are recognised under the ingest root:

* documentation files (``.md``, ``.rst``, ``.txt``) are split at function
  headings, one chunk per documented function;
* snippet files (``.py``) are split into fixed line windows with overlap.

Chunk ids are ``<source_path>:<start>-<end>`` so they are stable across runs.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

API_DOC = "api-doc"
CODE_SNIPPET = "code-snippet"
KINDS = (API_DOC, CODE_SNIPPET)

DOC_SUFFIXES = (".md", ".rst", ".txt")
SNIPPET_SUFFIXES = (".py",)

# Sphinx directives, markdown headings and bare ``def`` signatures.
DEFAULT_HEADING_PATTERN = (
    r"^(?:\.\.\s+(?:py:)?(?:function|method|class)::\s*"
    r"|#{2,6}\s+`?"
    r"|def\s+)"
    r"(?P<symbol>[A-Za-z_][\w.]*)"
)


class CorpusError(Exception):
    pass


class RootNotFound(CorpusError):
    pass


class UnreadableFile(CorpusError):
    def __init__(self, path: str, reason: str = ""):
        super().__init__(f"{path}: {reason}" if reason else path)
        self.path = path


@dataclass(frozen=True)
class ChunkConfig:
    max_lines: int = 60
    overlap_lines: int = 10
    heading_pattern: str = DEFAULT_HEADING_PATTERN

    def __post_init__(self):
        if self.max_lines < 1:
            raise ValueError("max_lines must be positive")
        if not 0 <= self.overlap_lines < self.max_lines:
            raise ValueError("overlap_lines must satisfy 0 <= overlap < max_lines")


@dataclass(frozen=True)
class DocChunk:
    id: str
    kind: str
    source_path: str
    text: str
    symbol: str | None = None
    line_span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chunk kind {self.kind!r}")
        if not self.text:
            raise ValueError("chunk text is empty")
        if self.line_span is not None and self.line_span[0] > self.line_span[1]:
            raise ValueError(f"bad line span {self.line_span}")

    @property
    def label(self) -> str:
        return self.symbol or self.source_path

    def to_dict(self) -> dict:
        start, end = self.line_span if self.line_span else (None, None)
        return {
            "id": self.id,
            "kind": self.kind,
            "symbol": self.symbol,
            "source_path": self.source_path,
            "text": self.text,
            "line_start": start,
            "line_end": end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DocChunk":
        span = None
        if d.get("line_start") is not None:
            span = (int(d["line_start"]), int(d["line_end"]))
        return cls(
            id=d["id"],
            kind=d["kind"],
            source_path=d["source_path"],
            text=d["text"],
            symbol=d.get("symbol"),
            line_span=span,
        )


@dataclass(frozen=True)
class Corpus:
    chunks: tuple[DocChunk, ...]
    source_fingerprint: str
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        ids = [c.id for c in self.chunks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids in corpus")
        object.__setattr__(self, "_by_id", {c.id: c for c in self.chunks})

    def __len__(self) -> int:
        return len(self.chunks)

    def get(self, chunk_id: str) -> DocChunk | None:
        return self._by_id.get(chunk_id)

    def ids_of_kind(self, kinds: Iterable[str]) -> set[str]:
        kinds = set(kinds)
        return {c.id for c in self.chunks if c.kind in kinds}


def chunk_id(source_path: str, span: tuple[int, int]) -> str:
    return f"{source_path}:{span[0]}-{span[1]}"


def window_spans(n_lines: int, max_lines: int, overlap_lines: int) -> list[tuple[int, int]]:
    """1-based inclusive line windows covering ``n_lines`` lines.

    Consecutive windows share ``overlap_lines`` lines. A tail window that
    would contribute fewer than ``overlap_lines`` new lines is instead
    anchored to the end of the file at full width.
    """
    if n_lines <= 0:
        return []
    if n_lines <= max_lines:
        return [(1, n_lines)]
    spans = []
    start = 1
    while True:
        end = min(start + max_lines - 1, n_lines)
        if spans and end == n_lines and end - spans[-1][1] < overlap_lines:
            start = max(1, n_lines - max_lines + 1)
        spans.append((start, end))
        if end == n_lines:
            return spans
        start = end - overlap_lines + 1


def _split_doc(lines: list[str], pattern: re.Pattern) -> list[tuple[str, int, int]]:
    """(symbol, start, end) for each heading-delimited entry; preamble is dropped."""
    heads = []
    for i, line in enumerate(lines):
        m = pattern.match(line)
        if m:
            heads.append((i, m.group("symbol")))
    entries = []
    for j, (i, symbol) in enumerate(heads):
        stop = heads[j + 1][0] if j + 1 < len(heads) else len(lines)
        while stop > i + 1 and not lines[stop - 1].strip():
            stop -= 1
        entries.append((symbol, i + 1, stop))
    return entries


def _iter_files(root: Path) -> list[Path]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
        for name in sorted(filenames):
            if name.startswith("."):
                continue
            p = Path(dirpath) / name
            if p.suffix.lower() in DOC_SUFFIXES + SNIPPET_SUFFIXES:
                out.append(p)
    return sorted(out, key=lambda p: p.relative_to(root).as_posix())


def chunk_docs(root: str | os.PathLike, config: ChunkConfig | None = None) -> Corpus:
    config = config or ChunkConfig()
    root = Path(root)
    if not root.is_dir():
        raise RootNotFound(str(root))
    pattern = re.compile(config.heading_pattern)

    digest = hashlib.sha256()
    chunks: list[DocChunk] = []
    skipped: list[str] = []
    files = _iter_files(root)
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            raw = path.read_bytes()
            text = raw.decode("utf-8")
        except (OSError, UnicodeDecodeError) as e:
            logger.warning("skipping unreadable file %s: %s", rel, e)
            skipped.append(rel)
            continue
        digest.update(rel.encode("utf-8") + b"\0" + raw + b"\0")
        lines = text.splitlines()

        if path.suffix.lower() in DOC_SUFFIXES:
            for symbol, start, end in _split_doc(lines, pattern):
                body = "\n".join(lines[start - 1 : end])
                chunks.append(DocChunk(chunk_id(rel, (start, end)), API_DOC, rel, body, symbol, (start, end)))
        else:
            for start, end in window_spans(len(lines), config.max_lines, config.overlap_lines):
                body = "\n".join(lines[start - 1 : end])
                if not body.strip():
                    continue
                chunks.append(DocChunk(chunk_id(rel, (start, end)), CODE_SNIPPET, rel, body, None, (start, end)))

    if files and len(skipped) == len(files):
        raise UnreadableFile(skipped[0], "every input file failed to read")
    return Corpus(tuple(chunks), digest.hexdigest(), tuple(skipped))


def dumps_corpus(corpus: Corpus) -> str:
    return "".join(json.dumps(c.to_dict(), ensure_ascii=False) + "\n" for c in corpus.chunks)


def write_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")


def read_corpus(path: str | os.PathLike) -> Corpus:
    raw = Path(path).read_bytes()
    chunks = [DocChunk.from_dict(json.loads(line)) for line in raw.decode("utf-8").splitlines() if line.strip()]
    return Corpus(tuple(chunks), hashlib.sha256(raw).hexdigest())
