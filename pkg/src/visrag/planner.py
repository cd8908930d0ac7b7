"""Turn a free-form visualization request into one operation per line."""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import templates
from .llm_gateway import ChatRequest

# "1." "2)" "-" "*" "•" ")" followed by whitespace or end of line
_MARKER = re.compile(r"^(?:\d+[.)]|[-*•)])(?:\s+|$)")
_CAMEL = re.compile(r"[A-Z][a-z0-9]+(?:[A-Z][a-z0-9]*)*")
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class NoOperations(ValueError):
    pass


@dataclass(frozen=True)
class OperationStep:
    index: int
    description: str
    api_hint: str | None = None


@dataclass(frozen=True)
class DecompositionPlan:
    user_prompt: str
    steps: tuple[OperationStep, ...]
    raw_expansion: str


def build_decomposition_request(user_prompt: str) -> ChatRequest:
    if not user_prompt.strip():
        raise ValueError("empty prompt")
    return templates.build_request("decompose", user_prompt=user_prompt)


def _strip_markers(line: str) -> str:
    line = line.strip()
    while True:
        m = _MARKER.match(line)
        if not m:
            return line
        line = line[m.end():].strip()


def api_hint(text: str) -> str | None:
    for tok in _TOKEN.findall(text):
        if _CAMEL.fullmatch(tok):
            return tok
    return None


def parse_expansion(raw: str) -> list[OperationStep]:
    descriptions = [d for d in (_strip_markers(line) for line in raw.splitlines()) if d]
    if not descriptions:
        raise NoOperations("the expansion contains no operations")
    return [OperationStep(i, d, api_hint(d)) for i, d in enumerate(descriptions, start=1)]


def render_steps(steps) -> str:
    return "\n".join(s.description for s in steps)


def decompose(user_prompt: str, backend) -> DecompositionPlan:
    reply = backend.complete(build_decomposition_request(user_prompt))
    return DecompositionPlan(user_prompt, tuple(parse_expansion(reply.content)), reply.content)
