"""Command-line entry point.

Exit codes: 0 success, 1 operational failure, 2 usage error.
Settings resolve as flags > environment > ``chatvis.toml`` > defaults; the
API credential is only ever read from ``LLM_API_KEY``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import bench, corpus, executor, metrics, vecindex
from .llm_gateway import GatewayError, RecordBackend, RemoteBackend, ReplayBackend, read_transcript
from .orchestrator import FEWSHOT, MODES, RAG, SUCCESS, Services, SessionConfig, run_session, write_session

log = logging.getLogger("visrag")

CONFIG_FILE = "chatvis.toml"


class UsageError(Exception):
    pass


class OperationalError(Exception):
    pass


def corpus_path_for(index_path: str | Path) -> Path:
    p = Path(index_path)
    return p.with_suffix(".corpus.jsonl") if p.suffix else p.with_name(p.name + ".corpus.jsonl")


def load_config(path: str | None) -> dict:
    if path is None:
        if not Path(CONFIG_FILE).exists():
            return {}
        path = CONFIG_FILE
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    if "api_key" in data:
        log.warning("ignoring api_key in %s; set LLM_API_KEY instead", path)
        data.pop("api_key")
    return data


def setting(args, name: str, cfg: dict, env_var: str | None = None, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if env_var and os.environ.get(env_var):
        return os.environ[env_var]
    if name in cfg:
        return cfg[name]
    return default


def interpreter(args, cfg: dict) -> tuple[str, ...]:
    value = setting(args, "interpreter", cfg, executor.INTERPRETER_ENV)
    if value is None:
        return executor.DEFAULT_INTERPRETER
    argv = [str(v) for v in value] if isinstance(value, (list, tuple)) else shlex.split(value)
    # scripts run inside their work dir, so pin relative file arguments to the caller's cwd
    return tuple(str(Path(a).resolve()) if not os.path.isabs(a) and os.sep in a and Path(a).is_file() else a for a in argv)


def remote_backend(args, cfg: dict) -> RemoteBackend:
    base = setting(args, "base_url", cfg, "LLM_BASE_URL")
    model = setting(args, "model", cfg, "LLM_MODEL")
    key = os.environ.get("LLM_API_KEY", "")
    if not base:
        raise UsageError("no LLM endpoint: set LLM_BASE_URL, --base-url or base_url in chatvis.toml")
    if not key:
        raise UsageError("no credential: set LLM_API_KEY")
    return RemoteBackend(base, key, model)


def _parse_list(value: str, allowed, what: str) -> list[str]:
    items = [v.strip() for v in value.split(",") if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise UsageError(f"bad {what} {value!r}; choose from {', '.join(allowed)}")
    return items


def _load_rag_services(index_path, corpus_arg, backend):
    if not index_path or not Path(index_path).exists():
        raise UsageError(f"rag mode needs an index; {index_path or '--index'} not found (run `visrag ingest` first)")
    cpath = Path(corpus_arg) if corpus_arg else corpus_path_for(index_path)
    if not cpath.exists():
        raise UsageError(f"corpus file {cpath} not found next to the index")
    index = vecindex.load(index_path)
    docs = corpus.read_corpus(cpath)
    missing = [cid for cid in index.ids if docs.get(cid) is None]
    if missing:
        raise OperationalError(f"index and corpus disagree; e.g. {missing[0]!r} has no chunk")
    return index, docs, vecindex.embedder_for_tag(index.embedder_tag, backend)


def cmd_ingest(args, cfg) -> int:
    chunk_cfg = corpus.ChunkConfig(
        int(setting(args, "max_lines", cfg, default=60)),
        int(setting(args, "overlap_lines", cfg, default=10)),
        setting(args, "heading_pattern", cfg, default=corpus.DEFAULT_HEADING_PATTERN),
    )
    docs = corpus.chunk_docs(args.docs, chunk_cfg)
    kind = setting(args, "embedder", cfg, default="fallback")
    if kind == "fallback":
        embedder = vecindex.HashingEmbedder()
    else:
        model = setting(args, "embed_model", cfg, "LLM_EMBED_MODEL")
        if not model:
            raise UsageError("--embedder remote needs --embed-model or LLM_EMBED_MODEL")
        embedder = vecindex.RemoteEmbedder(remote_backend(args, cfg), model)
    index = vecindex.build_index(docs, embedder)
    Path(args.index).parent.mkdir(parents=True, exist_ok=True)
    vecindex.persist(index, args.index)
    cpath = Path(args.corpus) if args.corpus else corpus_path_for(args.index)
    corpus.write_corpus(docs, cpath)
    kinds = {k: sum(c.kind == k for c in docs.chunks) for k in corpus.KINDS}
    print(json.dumps({"index": str(args.index), "corpus": str(cpath), "chunks": len(docs), "kinds": kinds,
                      "skipped": list(docs.skipped), "embedder_tag": index.embedder_tag}))
    return 0


def cmd_gen(args, cfg) -> int:
    if args.prompt is None and args.prompt_file is None:
        raise UsageError("gen needs --prompt or --prompt-file")
    prompt = args.prompt if args.prompt is not None else Path(args.prompt_file).read_text(encoding="utf-8")
    if not prompt.strip():
        raise UsageError("the prompt is empty")
    mode = setting(args, "mode", cfg, default=RAG)
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")

    if args.transcript:
        backend = ReplayBackend(read_transcript(args.transcript), args.replay_mode)
    else:
        backend = remote_backend(args, cfg)
        if args.record:
            backend = RecordBackend(backend, args.record)

    services = Services(backend)
    if mode == RAG:
        index_path = setting(args, "index", cfg)
        embed_backend = None if args.transcript else backend
        services.index, services.corpus, services.embedder = _load_rag_services(index_path, args.corpus, embed_backend)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exec_cfg = executor.ExecConfig(
        interpreter(args, cfg), str(out), float(setting(args, "timeout", cfg, default=executor.DEFAULT_TIMEOUT)),
        args.expected_artifact,
    )
    session_cfg = SessionConfig(
        mode,
        int(setting(args, "max_iterations", cfg, default=5)),
        exec_cfg,
        int(setting(args, "k", cfg, default=5)),
        int(setting(args, "budget_chars", cfg, default=24000)),
        tuple(args.kind) if args.kind else None,
    )
    session = run_session(prompt, session_cfg, services)
    write_session(session, out / "session.json")
    if session.final_script is not None:
        (out / "script.py").write_text(session.final_script.text.rstrip("\n") + "\n", encoding="utf-8")
    last = session.attempts[-1].result if session.attempts else None
    print(json.dumps({
        "status": session.status,
        "attempts": len(session.attempts),
        "artifacts": list(last.artifacts) if last else [],
        "session": str(out / "session.json"),
        "failure": session.failure,
    }))
    return 0 if session.status == SUCCESS else 1


def cmd_bench(args, cfg) -> int:
    modes = _parse_list(args.modes, MODES, "modes")
    variants = _parse_list(args.variants, bench.VARIANTS, "variants")
    tasks = bench.load_suite(args.suite)
    out = Path(args.out)

    if args.transcripts:
        tdir = Path(args.transcripts)
        if not tdir.is_dir():
            raise UsageError(f"transcript directory {tdir} not found")

        def gateway_for(task, mode, variant):
            p = tdir / f"{task.id}__{mode}__{variant}.jsonl"
            return ReplayBackend(read_transcript(p) if p.exists() else [], args.replay_mode)

        embed_backend = None
    else:
        remote = remote_backend(args, cfg)
        embed_backend = remote
        if args.record:
            rdir = Path(args.record)
            rdir.mkdir(parents=True, exist_ok=True)

            def gateway_for(task, mode, variant):
                return RecordBackend(remote, rdir / f"{task.id}__{mode}__{variant}.jsonl")
        else:
            def gateway_for(task, mode, variant):
                return remote

    index = docs = embedder = None
    if RAG in modes:
        index, docs, embedder = _load_rag_services(setting(args, "index", cfg), args.corpus, embed_backend)

    config = bench.BenchConfig(
        out_dir=out,
        interpreter_cmd=interpreter(args, cfg),
        timeout=float(setting(args, "timeout", cfg, default=executor.DEFAULT_TIMEOUT)),
        max_iterations=int(setting(args, "max_iterations", cfg, default=5)),
        k=int(setting(args, "k", cfg, default=5)),
        budget_chars=int(setting(args, "budget_chars", cfg, default=24000)),
        lpips_plugin=setting(args, "lpips_plugin", cfg, "CHATVIS_LPIPS"),
        resize=bool(args.resize or cfg.get("resize", False)),
        jobs=int(setting(args, "jobs", cfg, default=1)),
    )
    report = bench.run_suite(tasks, modes, variants, gateway_for, config, index, docs, embedder)
    written = bench.write_reports(report, out, figure=not args.no_figure)
    sys.stdout.write(bench.render_markdown(report))
    for p in written:
        log.info("wrote %s", p)
    return 0


def cmd_score(args, cfg) -> int:
    a, b = metrics.harmonize(metrics.load_png(args.image_a), metrics.load_png(args.image_b), args.resize)
    result = {"ssim": metrics.ssim(a, b), "psnr": metrics.psnr(a, b)}
    plugin = setting(args, "lpips_plugin", cfg, "CHATVIS_LPIPS")
    if plugin:
        try:
            result["lpips"] = metrics.lpips(args.image_a, args.image_b, plugin)
        except metrics.PluginMissing as e:
            log.warning("%s", e)
            result["lpips"] = None
    if args.json:
        print(json.dumps({k: ("inf" if v == float("inf") else v) for k, v in result.items()}))
    else:
        for k, v in result.items():
            print(f"{k}={'n/a' if v is None else v}")
    return 0


def cmd_extract_errors(args, cfg) -> int:
    text = sys.stdin.read() if args.log == "-" else Path(args.log).read_text(encoding="utf-8", errors="replace")
    records = executor.extract_tracebacks(text)
    print(json.dumps([r.to_dict() for r in records], indent=2))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="visrag", description="Generate and benchmark visualization scripts with retrieval and repair.")
    p.add_argument("--config", help=f"settings file (default ./{CONFIG_FILE} if present)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def llm_flags(sp):
        sp.add_argument("--base-url", dest="base_url")
        sp.add_argument("--model")
        sp.add_argument("--replay-mode", choices=("ordered", "digest"), default="ordered")

    def exec_flags(sp):
        sp.add_argument("--interpreter", help="interpreter command line (default pvpython)")
        sp.add_argument("--timeout", type=float)
        sp.add_argument("--max-iterations", dest="max_iterations", type=int)
        sp.add_argument("--index")
        sp.add_argument("--corpus")
        sp.add_argument("--k", type=int)
        sp.add_argument("--budget-chars", dest="budget_chars", type=int)

    sp = sub.add_parser("ingest", help="chunk documentation and build the vector index")
    sp.add_argument("--docs", required=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--corpus")
    sp.add_argument("--max-lines", dest="max_lines", type=int)
    sp.add_argument("--overlap-lines", dest="overlap_lines", type=int)
    sp.add_argument("--heading-pattern", dest="heading_pattern")
    sp.add_argument("--embedder", choices=("fallback", "remote"))
    sp.add_argument("--embed-model", dest="embed_model")
    sp.add_argument("--base-url", dest="base_url")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("gen", help="generate one script from a prompt")
    sp.add_argument("--prompt")
    sp.add_argument("--prompt-file", dest="prompt_file")
    sp.add_argument("--mode", choices=MODES)
    sp.add_argument("--out", required=True)
    sp.add_argument("--expected-artifact", dest="expected_artifact")
    sp.add_argument("--kind", action="append", choices=corpus.KINDS, help="restrict retrieval to a chunk kind")
    sp.add_argument("--transcript", help="replay LLM replies from this transcript")
    sp.add_argument("--record", help="append live exchanges to this transcript")
    llm_flags(sp)
    exec_flags(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("bench", help="run a benchmark suite")
    sp.add_argument("--suite", required=True)
    sp.add_argument("--modes", default=f"{RAG},{FEWSHOT}")
    sp.add_argument("--variants", default="full,quick")
    sp.add_argument("--out", required=True)
    sp.add_argument("--transcripts", help="directory of <task>__<mode>__<variant>.jsonl replay files")
    sp.add_argument("--record", help="directory to record live transcripts into")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--lpips-plugin", dest="lpips_plugin")
    sp.add_argument("--resize", action="store_true")
    sp.add_argument("--no-figure", dest="no_figure", action="store_true")
    llm_flags(sp)
    exec_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("score", help="compare two images")
    sp.add_argument("image_a")
    sp.add_argument("image_b")
    sp.add_argument("--lpips-plugin", dest="lpips_plugin")
    sp.add_argument("--resize", action="store_true")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("extract-errors", help="parse tracebacks out of a log file")
    sp.add_argument("log", help="log file, or - for stdin")
    sp.set_defaults(func=cmd_extract_errors)
    return p


_OPERATIONAL = (
    OperationalError,
    OSError,
    GatewayError,
    corpus.CorpusError,
    vecindex.VectorIndexError,
    executor.ExecutorError,
    metrics.MetricError,
    bench.BenchError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"visrag {args.command}: {e}", file=sys.stderr)
        parser._subparsers._group_actions[0].choices[args.command].print_usage(sys.stderr)
        return 2
    except _OPERATIONAL as e:
        print(f"visrag {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
