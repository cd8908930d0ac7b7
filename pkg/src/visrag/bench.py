"""Benchmark suite: task manifests, the mode x prompt-variant run matrix, reports.

Suite layout::

    suite_dir/<task_id>/manifest.toml
    suite_dir/<task_id>/full_prompt.txt, quick_prompt.txt, <reference script>,
                        ground_truth.png, data/...

``manifest.toml`` keys: ``id``, ``category`` (canonical | regression |
science), ``full_prompt``, ``quick_prompt``, ``reference_script``,
``ground_truth``, ``expected_output`` and optionally ``data`` (list of paths).
All paths are relative to the task directory.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import metrics
from .executor import ExecConfig
from .orchestrator import FEWSHOT, MODES, RAG, SUCCESS, Services, SessionConfig, run_session, write_session

logger = logging.getLogger(__name__)

CATEGORIES = ("canonical", "regression", "science")
VARIANTS = ("full", "quick")
MANIFEST = "manifest.toml"
_REQUIRED = ("id", "category", "full_prompt", "quick_prompt", "reference_script", "ground_truth", "expected_output")


class BenchError(Exception):
    pass


class ManifestInvalid(BenchError):
    def __init__(self, task: str, field_name: str, detail: str = ""):
        super().__init__(f"{task}: invalid or missing {field_name!r}{' (' + detail + ')' if detail else ''}")
        self.task = task
        self.field = field_name


class MissingAsset(BenchError):
    def __init__(self, path: str):
        super().__init__(f"missing asset {path}")
        self.path = path


@dataclass(frozen=True)
class BenchmarkTask:
    id: str
    category: str
    full_prompt: Path
    quick_prompt: Path
    reference_script: Path
    ground_truth_image: Path
    expected_output: str
    data_files: tuple[Path, ...] = ()

    @property
    def root(self) -> Path:
        return self.full_prompt.parent

    def prompt(self, variant: str) -> str:
        path = self.full_prompt if variant == "full" else self.quick_prompt
        return path.read_text(encoding="utf-8")


def _load_task(task_dir: Path) -> BenchmarkTask:
    name = task_dir.name
    try:
        manifest = tomllib.loads((task_dir / MANIFEST).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ManifestInvalid(name, MANIFEST, str(e)) from e
    for key in _REQUIRED:
        value = manifest.get(key)
        if not isinstance(value, str) or not value.strip():
            raise ManifestInvalid(name, key)
    if manifest["category"] not in CATEGORIES:
        raise ManifestInvalid(name, "category", f"expected one of {', '.join(CATEGORIES)}")
    data = manifest.get("data", [])
    if not isinstance(data, list) or not all(isinstance(d, str) for d in data):
        raise ManifestInvalid(name, "data", "expected a list of paths")

    def asset(rel: str) -> Path:
        p = task_dir / rel
        if not p.exists():
            raise MissingAsset(str(p))
        return p

    full, quick = asset(manifest["full_prompt"]), asset(manifest["quick_prompt"])
    for key, p in (("full_prompt", full), ("quick_prompt", quick)):
        if not p.read_text(encoding="utf-8").strip():
            raise ManifestInvalid(name, key, "prompt is empty")
    truth = asset(manifest["ground_truth"])
    try:
        metrics.load_png(truth)
    except Exception as e:
        raise ManifestInvalid(name, "ground_truth", f"does not decode: {e}") from e
    return BenchmarkTask(
        manifest["id"],
        manifest["category"],
        full,
        quick,
        asset(manifest["reference_script"]),
        truth,
        manifest["expected_output"],
        tuple(asset(d) for d in data),
    )


def load_suite(suite_dir: str | Path) -> list[BenchmarkTask]:
    root = Path(suite_dir)
    if not root.is_dir():
        raise MissingAsset(str(root))
    tasks = [_load_task(d) for d in sorted(root.iterdir()) if d.is_dir() and (d / MANIFEST).exists()]
    if not tasks:
        logger.warning("suite %s contains no tasks", root)
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise BenchError("duplicate task ids in suite")
    tasks.sort(key=lambda t: t.id)
    counts = {c: sum(t.category == c for t in tasks) for c in CATEGORIES}
    logger.info("loaded %d tasks: %s", len(tasks), counts)
    return tasks


@dataclass(frozen=True)
class TaskRow:
    mode: str
    variant: str
    task_id: str
    category: str
    status: str
    attempts: int
    score: metrics.TaskScore
    note: str = ""


@dataclass(frozen=True)
class Cell:
    mode: str
    variant: str
    rows: tuple[TaskRow, ...]
    aggregate: metrics.AggregateScores | None


@dataclass
class BenchReport:
    config: dict
    cells: list[Cell] = field(default_factory=list)
    started: str = ""
    finished: str = ""

    def cell(self, mode: str, variant: str) -> Cell:
        for c in self.cells:
            if (c.mode, c.variant) == (mode, variant):
                return c
        raise KeyError((mode, variant))

    @property
    def rows(self) -> list[TaskRow]:
        return [r for c in self.cells for r in c.rows]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "timestamps": {"started": self.started, "finished": self.finished},
            "cells": [
                {
                    "mode": c.mode,
                    "variant": c.variant,
                    "aggregate": None if c.aggregate is None else _floats_out(asdict(c.aggregate)),
                    "rows": [
                        {
                            "task_id": r.task_id,
                            "category": r.category,
                            "status": r.status,
                            "attempts": r.attempts,
                            "note": r.note,
                            "score": _floats_out(asdict(r.score)),
                        }
                        for r in c.rows
                    ],
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        cells = []
        for c in d["cells"]:
            rows = tuple(
                TaskRow(
                    c["mode"],
                    c["variant"],
                    r["task_id"],
                    r["category"],
                    r["status"],
                    r["attempts"],
                    metrics.TaskScore(**_floats_in(r["score"])),
                    r.get("note", ""),
                )
                for r in c["rows"]
            )
            agg = None if c["aggregate"] is None else metrics.AggregateScores(**_floats_in(c["aggregate"]))
            cells.append(Cell(c["mode"], c["variant"], rows, agg))
        ts = d.get("timestamps", {})
        return cls(d["config"], cells, ts.get("started", ""), ts.get("finished", ""))


def _floats_out(d: dict) -> dict:
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


def _floats_in(d: dict) -> dict:
    return {k: (math.inf if v == "inf" else v) for k, v in d.items()}


@dataclass(frozen=True)
class BenchConfig:
    out_dir: Path
    interpreter_cmd: tuple[str, ...]
    timeout: float = 300.0
    max_iterations: int = 5
    k: int = 5
    budget_chars: int = 24000
    lpips_plugin: str | None = None
    resize: bool = False
    jobs: int = 1


GatewayFactory = Callable[[BenchmarkTask, str, str], object]


def _stage_work_dir(task: BenchmarkTask, work: Path) -> None:
    if work.exists():
        shutil.rmtree(work)
    work.mkdir(parents=True)
    for src in task.data_files:
        rel = src.relative_to(task.root)
        dst = work / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        if src.is_dir():
            shutil.copytree(src, dst)
        else:
            shutil.copy2(src, dst)


def _score(task: BenchmarkTask, produced: Path, config: BenchConfig) -> tuple[metrics.TaskScore, str]:
    notes = []
    try:
        a, b = metrics.harmonize(metrics.load_png(produced), metrics.load_png(task.ground_truth_image), config.resize)
    except metrics.ShapeMismatch as e:
        return metrics.TaskScore(task.id, True), f"shape mismatch: {e}"
    except OSError as e:
        return metrics.TaskScore(task.id, True), f"unreadable output: {e}"
    s = None
    try:
        s = metrics.ssim(a, b)
    except metrics.TooSmall as e:
        notes.append(str(e))
    p = metrics.psnr(a, b)
    lp = None
    if config.lpips_plugin:
        try:
            lp = metrics.lpips(produced, task.ground_truth_image, config.lpips_plugin)
        except (metrics.PluginMissing, metrics.PluginMalformedOutput) as e:
            notes.append(f"lpips unavailable: {e}")
    return metrics.TaskScore(task.id, True, s, p, lp), "; ".join(notes)


def run_task(task: BenchmarkTask, mode: str, variant: str, services: Services, config: BenchConfig) -> TaskRow:
    work = config.out_dir / "work" / f"{mode}-{variant}" / task.id
    _stage_work_dir(task, work)
    exec_cfg = ExecConfig(config.interpreter_cmd, str(work), config.timeout, task.expected_output)
    session_cfg = SessionConfig(mode, config.max_iterations, exec_cfg, config.k, config.budget_chars)
    session = run_session(task.prompt(variant), session_cfg, services)
    write_session(session, work / "session.json")
    note = session.failure or ""
    if session.status == SUCCESS:
        score, note = _score(task, work / task.expected_output, config)
    else:
        score = metrics.TaskScore(task.id, False)
    return TaskRow(mode, variant, task.id, task.category, session.status, len(session.attempts), score, note)


def run_suite(
    tasks: Sequence[BenchmarkTask],
    modes: Sequence[str],
    variants: Sequence[str],
    gateway_for: GatewayFactory,
    config: BenchConfig,
    index=None,
    corpus=None,
    embedder=None,
) -> BenchReport:
    """Run every task in every (mode, variant) cell and score the passes.

    ``gateway_for(task, mode, variant)`` supplies the LLM backend for one
    session. Gateway failures mark that task failed; the suite carries on.
    """
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    if RAG in modes and (index is None or corpus is None or embedder is None):
        raise ValueError("rag mode needs a built index")
    report = BenchReport(
        {
            "modes": list(modes),
            "variants": list(variants),
            "tasks": [t.id for t in tasks],
            "max_iterations": config.max_iterations,
            "k": config.k,
            "budget_chars": config.budget_chars,
            "timeout": config.timeout,
            "lpips": bool(config.lpips_plugin),
        },
        started=_now(),
    )
    for mode in (m for m in MODES if m in modes):
        for variant in (v for v in VARIANTS if v in variants):

            def one(task, mode=mode, variant=variant):
                if mode == FEWSHOT:
                    services = Services(gateway_for(task, mode, variant))
                else:
                    services = Services(gateway_for(task, mode, variant), index, corpus, embedder)
                return run_task(task, mode, variant, services, config)

            with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as pool:
                rows = sorted(pool.map(one, tasks), key=lambda r: r.task_id)
            agg = metrics.aggregate([r.score for r in rows]) if rows else None
            report.cells.append(Cell(mode, variant, tuple(rows), agg))
    report.finished = _now()
    return report


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fmt(value, digits: int) -> str:
    if value is None:
        return "n/a"
    if math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def _raw(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def render_markdown(report: BenchReport) -> str:
    lines = [
        "| mode | prompt | pass@1 ↑ | SSIM ↑ | PSNR ↑ | LPIPS ↓ |",
        "|---|---|---|---|---|---|",
    ]
    for c in report.cells:
        a = c.aggregate
        if a is None:
            continue
        lines.append(
            f"| {c.mode} | {c.variant} | {_fmt(a.pass_at_1, 1)} | {_fmt(a.mean_ssim, 2)} "
            f"| {_fmt(a.mean_psnr, 1)} | {_fmt(a.mean_lpips, 2)} |"
        )
    lines += [
        "",
        "Scaled by pass@1 (metrics spread over all tasks):",
        "",
        "| mode | prompt | SSIM scaled ↑ | PSNR scaled ↑ | LPIPS scaled ↓ |",
        "|---|---|---|---|---|",
    ]
    for c in report.cells:
        a = c.aggregate
        if a is None:
            continue
        lines.append(
            f"| {c.mode} | {c.variant} | {_fmt(a.scaled_ssim, 2)} | {_fmt(a.scaled_psnr, 1)} | {_fmt(a.scaled_lpips, 2)} |"
        )
    lines += ["", "| mode | prompt | task | category | status | attempts | SSIM | PSNR | LPIPS |", "|---|---|---|---|---|---|---|---|---|"]
    for r in report.rows:
        s = r.score
        lines.append(
            f"| {r.mode} | {r.variant} | {r.task_id} | {r.category} | {r.status} | {r.attempts} "
            f"| {_fmt(s.ssim, 3)} | {_fmt(s.psnr, 1)} | {_fmt(s.lpips, 3)} |"
        )
    lines.append("")
    lines.append("Image metrics are averaged over passing tasks only; infinite PSNR counts as 100 dB in averages. Values are rounded for display.")
    return "\n".join(lines) + "\n"


CSV_FIELDS = ("row", "mode", "variant", "task_id", "category", "status", "attempts", "passed",
              "pass_at_1", "ssim", "psnr", "lpips", "scaled_ssim", "scaled_psnr", "scaled_lpips")


def render_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for c in report.cells:
        for r in c.rows:
            s = r.score
            w.writerow(["task", r.mode, r.variant, r.task_id, r.category, r.status, r.attempts,
                        int(s.passed), "", _raw(s.ssim), _raw(s.psnr), _raw(s.lpips), "", "", ""])
        a = c.aggregate
        if a is not None:
            w.writerow(["aggregate", c.mode, c.variant, "", "", "", "", a.n_passed, _raw(a.pass_at_1),
                        _raw(a.mean_ssim), _raw(a.mean_psnr), _raw(a.mean_lpips),
                        _raw(a.scaled_ssim), _raw(a.scaled_psnr), _raw(a.scaled_lpips)])
    return buf.getvalue()


def render_json(report: BenchReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def render_report(report: BenchReport, fmt: str = "markdown") -> str:
    renderers = {"markdown": render_markdown, "csv": render_csv, "json": render_json}
    if fmt not in renderers:
        raise ValueError(f"unknown report format {fmt!r}")
    return renderers[fmt](report)


def write_reports(report: BenchReport, out_dir: str | Path, figure: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, name in (("markdown", "report.md"), ("csv", "report.csv"), ("json", "report.json")):
        p = out / name
        p.write_text(render_report(report, fmt), encoding="utf-8")
        written.append(p)
    if figure and any(c.aggregate for c in report.cells):
        from .plotting import plot_report

        written.append(plot_report(report, out / "report.png"))
    return written
