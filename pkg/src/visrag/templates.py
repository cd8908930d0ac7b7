"""Prompt templates shipped under ``visrag/prompts``.

A template file has a ``[system]`` section and a ``[user]`` section. Lines
starting with ``#`` before the first section are comments. Placeholders are
written ``{{name}}`` and substituted in a single pass, so values that happen
to contain ``{{...}}`` are inserted literally.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .llm_gateway import ChatRequest, Message

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


@lru_cache(maxsize=None)
def load(name: str) -> tuple[str, str]:
    text = resources.files("visrag").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = re.fullmatch(r"\[(system|user)\]", line.strip())
        if m:
            current = sections.setdefault(m.group(1), [])
        elif current is not None:
            current.append(line)
        elif line.strip() and not line.startswith("#"):
            raise ValueError(f"prompt template {name!r}: text outside a section")
    if set(sections) != {"system", "user"}:
        raise ValueError(f"prompt template {name!r} needs [system] and [user] sections")
    return "\n".join(sections["system"]).strip(), "\n".join(sections["user"]).strip("\n")


def render(text: str, **values: str) -> str:
    def sub(m):
        key = m.group(1)
        if key not in values:
            raise KeyError(f"no value for placeholder {{{{{key}}}}}")
        return values[key]

    return _PLACEHOLDER.sub(sub, text)


def build_request(name: str, **values: str) -> ChatRequest:
    system, user = load(name)
    return ChatRequest((Message("system", system), Message("user", render(user, **values))))
