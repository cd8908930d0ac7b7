"""One prompt-to-script session with execution-driven repair.

In ``rag`` mode the prompt is first decomposed into operations, each
operation pulls reference chunks from the index, and failed attempts pull
more chunks for the failing lines. ``fewshot`` mode skips all of that and
only loops on interpreter errors.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import templates
from .corpus import Corpus
from .executor import ExecConfig, ExecutionResult, TracebackRecord, run_script
from .generator import (
    DEFAULT_BUDGET_CHARS,
    DEFAULT_K,
    ContextBundle,
    EmptyReply,
    GeneratedScript,
    build_generation_request,
    extract_script,
    format_context,
    retrieve_context,
)
from .llm_gateway import ChatRequest, GatewayError
from .planner import DecompositionPlan, NoOperations, OperationStep, build_decomposition_request, parse_expansion
from .vecindex import VectorIndex

logger = logging.getLogger(__name__)

RAG = "rag"
FEWSHOT = "fewshot"
MODES = (RAG, FEWSHOT)

SUCCESS = "Success"
EXHAUSTED = "Exhausted"
GATEWAY_FAILURE = "GatewayFailure"

MISSING_ARTIFACT = "MissingArtifact"
DEFAULT_MAX_ITERATIONS = 5


@dataclass(frozen=True)
class SessionConfig:
    mode: str = RAG
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    exec: ExecConfig = field(default_factory=ExecConfig)
    k: int = DEFAULT_K
    budget_chars: int = DEFAULT_BUDGET_CHARS
    kinds: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class Services:
    gateway: object
    index: VectorIndex | None = None
    corpus: Corpus | None = None
    embedder: object | None = None


@dataclass(frozen=True)
class Attempt:
    script: GeneratedScript
    result: ExecutionResult
    correction_request_digest: str | None = None

    def to_dict(self) -> dict:
        return {
            "script": self.script.text,
            "script_origin": self.script.origin,
            "reply_digest": self.script.reply_digest,
            "result": self.result.to_dict(),
            "correction_request_digest": self.correction_request_digest,
        }


@dataclass
class GenerationSession:
    user_prompt: str
    mode: str
    attempts: list[Attempt] = field(default_factory=list)
    status: str = EXHAUSTED
    plan: DecompositionPlan | None = None
    failure: str | None = None
    expected_artifact: str | None = None

    @property
    def final_script(self) -> GeneratedScript | None:
        return self.attempts[-1].script if self.attempts else None

    def to_dict(self) -> dict:
        plan = None
        if self.plan is not None:
            plan = {
                "raw_expansion": self.plan.raw_expansion,
                "steps": [{"index": s.index, "description": s.description, "api_hint": s.api_hint} for s in self.plan.steps],
            }
        return {
            "prompt": self.user_prompt,
            "mode": self.mode,
            "status": self.status,
            "failure": self.failure,
            "expected_artifact": self.expected_artifact,
            "plan": plan,
            "attempts": [a.to_dict() for a in self.attempts],
        }


def write_session(session: GenerationSession, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(session.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def build_correction_request(
    previous: GeneratedScript,
    errors: list[TracebackRecord],
    extra_context: ContextBundle | None = None,
    user_prompt: str = "",
) -> ChatRequest:
    if not errors:
        raise ValueError("a correction request needs at least one error record")
    blocks = []
    for rec in errors:
        head = f"{rec.error_class}: {rec.error_message}" if rec.error_message else rec.error_class
        blocks.append(head + "\n" + rec.text)
    preamble = f"Original request:\n{user_prompt}" if user_prompt else ""
    return templates.build_request(
        "correct",
        user_prompt=preamble,
        script=previous.text,
        errors="\n\n".join(blocks),
        context=format_context(extra_context),
    )


def _failing_queries(script: GeneratedScript, result: ExecutionResult, errors: list[TracebackRecord]) -> list[OperationStep]:
    """Retrieval queries for a failed attempt: the offending script lines plus the error text."""
    script_lines = script.text.split("\n")
    queries: list[str] = []
    for rec in errors:
        for path, lineno in rec.locations:
            if lineno and Path(path).name == Path(result.script_path).name and 1 <= lineno <= len(script_lines):
                line = script_lines[lineno - 1].strip()
                if line:
                    queries.append(line)
        queries.append(f"{rec.error_class} {rec.error_message}".strip())
    unique = [q for i, q in enumerate(queries) if q and q not in queries[:i]]
    return [OperationStep(i, q) for i, q in enumerate(unique, start=1)]


def _artifact_ok(result: ExecutionResult, expected: str | None) -> bool:
    return expected is None or expected in result.artifacts


def run_session(user_prompt: str, config: SessionConfig, services: Services) -> GenerationSession:
    if not user_prompt.strip():
        raise ValueError("empty prompt")
    expected = config.exec.expected_artifact
    session = GenerationSession(user_prompt, config.mode, expected_artifact=expected)
    rag = config.mode == RAG
    if rag and (services.index is None or services.corpus is None or services.embedder is None):
        raise ValueError("rag mode needs an index, a corpus and an embedder")
    gateway = services.gateway

    try:
        bundle = None
        if rag:
            reply = gateway.complete(build_decomposition_request(user_prompt))
            try:
                steps = parse_expansion(reply.content)
            except NoOperations:
                logger.warning("decomposition produced no operations; retrieving with the raw prompt")
                steps = [OperationStep(1, user_prompt.strip())]
            session.plan = DecompositionPlan(user_prompt, tuple(steps), reply.content)
            bundle = retrieve_context(
                steps, services.index, services.corpus, services.embedder, config.k, config.budget_chars, config.kinds
            )
        request = build_generation_request(user_prompt, bundle)

        for n in range(1, config.max_iterations + 1):
            script = extract_script(gateway.complete(request))
            result = run_script(script, config.exec, script_name=f"attempt_{n:02d}.py")
            if result.success() and _artifact_ok(result, expected):
                session.attempts.append(Attempt(script, result))
                session.status = SUCCESS
                return session
            if n == config.max_iterations:
                session.attempts.append(Attempt(script, result))
                break
            errors = result.error_records()
            if not errors:
                errors = [TracebackRecord((f"expected output file {expected!r} was not written",), MISSING_ARTIFACT, f"{expected} not produced")]
            extra = None
            if rag:
                extra = retrieve_context(
                    _failing_queries(script, result, errors),
                    services.index,
                    services.corpus,
                    services.embedder,
                    config.k,
                    config.budget_chars,
                    config.kinds,
                )
            request = build_correction_request(script, errors, extra, user_prompt)
            session.attempts.append(Attempt(script, result, request.digest()))
            logger.info("attempt %d failed with %s; requesting a correction", n, errors[0].error_class)
        session.status = EXHAUSTED
    except (GatewayError, EmptyReply) as e:
        session.status = GATEWAY_FAILURE
        session.failure = f"{type(e).__name__}: {e}"
        logger.warning("gateway failure: %s", session.failure)
    return session
