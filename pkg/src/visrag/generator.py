"""Retrieve reference material per operation and ask the model for a script."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import templates
from .corpus import Corpus, DocChunk
from .llm_gateway import ChatReply, ChatRequest
from .planner import OperationStep
from .vecindex import VectorIndex, embed, search

DEFAULT_K = 5
DEFAULT_BUDGET_CHARS = 24000

FENCED = "fenced-block"
WHOLE_REPLY = "whole-reply"

_FENCE = re.compile(r"^```[^\n`]*\n(.*?)^```", re.DOTALL | re.MULTILINE)


class UnresolvedChunk(LookupError):
    def __init__(self, chunk_id: str):
        super().__init__(f"index entry {chunk_id!r} is not in the corpus")
        self.chunk_id = chunk_id


class EmptyReply(ValueError):
    pass


@dataclass(frozen=True)
class Selection:
    step: OperationStep
    chunks: tuple[DocChunk, ...]
    scores: tuple[float, ...] = ()


@dataclass(frozen=True)
class ContextBundle:
    selections: tuple[Selection, ...] = ()
    total_chars: int = 0

    @property
    def chunks(self) -> list[DocChunk]:
        return [c for s in self.selections for c in s.chunks]

    def __bool__(self) -> bool:
        return any(s.chunks for s in self.selections)


@dataclass(frozen=True)
class GeneratedScript:
    text: str
    origin: str
    reply_digest: str = field(default="")

    def __post_init__(self):
        if not self.text:
            raise ValueError("script text is empty")


def retrieve_context(
    steps: Sequence[OperationStep],
    index: VectorIndex,
    corpus: Corpus,
    embedder,
    k: int = DEFAULT_K,
    budget_chars: int = DEFAULT_BUDGET_CHARS,
    kinds: Iterable[str] | None = None,
) -> ContextBundle:
    """Top-``k`` chunks per step, deduplicated, trimmed to ``budget_chars``.

    A chunk retrieved by several steps is kept under the earliest one. When
    the total text exceeds the budget, the lowest-scoring picks are dropped
    first.
    """
    if not steps:
        return ContextBundle()
    restrict = corpus.ids_of_kind(kinds) if kinds is not None else None
    seen: set[str] = set()
    picks = []  # (step position, score, chunk)
    for pos, step in enumerate(steps):
        for hit in search(index, embed(step.description, embedder), k, restrict):
            chunk = corpus.get(hit.chunk_id)
            if chunk is None:
                raise UnresolvedChunk(hit.chunk_id)
            if chunk.id in seen:
                continue
            seen.add(chunk.id)
            picks.append((pos, hit.score, chunk))

    total = sum(len(c.text) for _, _, c in picks)
    if total > budget_chars:
        # drop order: lowest score, then later step, then larger id
        by_weakness = sorted(picks, key=lambda p: p[2].id, reverse=True)
        by_weakness.sort(key=lambda p: (p[1], -p[0]))
        dropped = set()
        for p in by_weakness:
            if total <= budget_chars:
                break
            dropped.add(p[2].id)
            total -= len(p[2].text)
        picks = [p for p in picks if p[2].id not in dropped]

    selections = []
    for pos, step in enumerate(steps):
        mine = sorted((p for p in picks if p[0] == pos), key=lambda p: (-p[1], p[2].id))
        selections.append(Selection(step, tuple(p[2] for p in mine), tuple(p[1] for p in mine)))
    return ContextBundle(tuple(selections), total)


def format_context(bundle: ContextBundle | None) -> str:
    if not bundle:
        return ""
    parts = ["Reference material:"]
    for chunk in bundle.chunks:
        parts.append(f"### {chunk.label} ({chunk.kind})\n{chunk.text}")
    return "\n\n".join(parts)


def build_generation_request(user_prompt: str, bundle: ContextBundle | None = None) -> ChatRequest:
    return templates.build_request("generate", user_prompt=user_prompt, context=format_context(bundle))


def extract_script(reply: ChatReply) -> GeneratedScript:
    """Pull the script out of a model reply.

    The body of the fenced block is returned without the newline that
    precedes the closing fence. With several blocks the longest wins; with
    none, the whole reply is the script.
    """
    content = reply.content
    if not content.strip():
        raise EmptyReply("the model returned an empty reply")
    digest = hashlib.sha256(content.encode("utf-8")).hexdigest()
    blocks = [b[:-1] if b.endswith("\n") else b for b in _FENCE.findall(content)]
    blocks = [b for b in blocks if b.strip()]
    if blocks:
        best = max(blocks, key=len)  # first of equal-length blocks
        return GeneratedScript(best, FENCED, digest)
    return GeneratedScript(content, WHOLE_REPLY, digest)
