"""Run candidate scripts under an external interpreter and harvest errors."""
from __future__ import annotations

import os
import re
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_INTERPRETER = ("pvpython",)
DEFAULT_TIMEOUT = 300.0
INTERPRETER_ENV = "CHATVIS_INTERPRETER"

UNKNOWN_ERROR = "UnknownError"
NONZERO_EXIT = "NonzeroExit"
TIMEOUT_ERROR = "Timeout"
TAIL_LINES = 20

_FILE_LINE = re.compile(r"\bFile\s+([\"'])(?P<path>.+?)\1(?:,\s*line\s+(?P<line>\d+))?")
_ERROR_LINE = re.compile(r"^(?P<cls>[A-Za-z_][\w.]*(?:Error|Exception))\b(?::|\s|$)")


class ExecutorError(Exception):
    pass


class InterpreterNotFound(ExecutorError):
    pass


class WorkDirUnwritable(ExecutorError):
    pass


@dataclass(frozen=True)
class TracebackRecord:
    lines: tuple[str, ...]
    error_class: str
    error_message: str = ""
    locations: tuple[tuple[str, int | None], ...] = ()

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def to_dict(self) -> dict:
        return {
            "error_class": self.error_class,
            "error_message": self.error_message,
            "locations": [{"file": f, "line": n} for f, n in self.locations],
            "lines": list(self.lines),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TracebackRecord":
        return cls(
            tuple(d["lines"]),
            d["error_class"],
            d.get("error_message", ""),
            tuple((loc["file"], loc["line"]) for loc in d.get("locations", [])),
        )


def _record(lines: list[str], error_class: str, message: str) -> TracebackRecord:
    locations = []
    for line in lines:
        m = _FILE_LINE.search(line)
        if m:
            locations.append((m.group("path"), int(m.group("line")) if m.group("line") else None))
    return TracebackRecord(tuple(lines), error_class, message, tuple(locations))


def extract_tracebacks(output: str) -> list[TracebackRecord]:
    """Collect traceback blocks from interpreter output.

    A block opens on a line holding ``File "<path>"`` and closes on the first
    line that starts with a name ending in ``Error`` or ``Exception``. A
    block still open at end of output is reported as ``UnknownError``.
    """
    records = []
    collecting: list[str] | None = None
    lines = output.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # a final newline terminates the last line, it does not open another
    for line in lines:
        bare = line.rstrip("\r")
        if collecting is None:
            if _FILE_LINE.search(bare):
                collecting = [line]
            continue
        collecting.append(line)
        m = _ERROR_LINE.match(bare)
        if m:
            message = bare[m.end("cls"):].lstrip(":").strip()
            records.append(_record(collecting, m.group("cls"), message))
            collecting = None
    if collecting is not None:
        records.append(_record(collecting, UNKNOWN_ERROR, ""))
    return records


@dataclass(frozen=True)
class ExecConfig:
    interpreter_cmd: tuple[str, ...] = DEFAULT_INTERPRETER
    work_dir: str = "."
    timeout: float = DEFAULT_TIMEOUT
    expected_artifact: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "interpreter_cmd", tuple(self.interpreter_cmd))
        if not self.interpreter_cmd:
            raise ValueError("interpreter_cmd is empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def interpreter_from_env(env=None) -> tuple[str, ...]:
    env = os.environ if env is None else env
    value = env.get(INTERPRETER_ENV, "").strip()
    return tuple(shlex.split(value)) if value else DEFAULT_INTERPRETER


@dataclass(frozen=True)
class ExecutionResult:
    exit_status: int | None  # None when the run was killed at the timeout
    stdout: str
    stderr: str
    tracebacks: tuple[TracebackRecord, ...] = ()
    artifacts: tuple[str, ...] = ()
    wall_time: float = 0.0
    script_path: str = ""

    @property
    def timed_out(self) -> bool:
        return self.exit_status is None

    def success(self) -> bool:
        return self.exit_status == 0 and not self.tracebacks

    def error_records(self) -> list[TracebackRecord]:
        """Tracebacks, or one synthesised record when a failed run printed none."""
        if self.tracebacks:
            return list(self.tracebacks)
        if self.success():
            return []
        tail = _tail(self.stdout, self.stderr)
        if self.timed_out:
            return [TracebackRecord(tuple(tail), TIMEOUT_ERROR, "the script did not finish before the timeout")]
        return [TracebackRecord(tuple(tail), NONZERO_EXIT, "\n".join(tail))]

    def to_dict(self) -> dict:
        return {
            "exit_status": "timeout" if self.timed_out else self.exit_status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "tracebacks": [t.to_dict() for t in self.tracebacks],
            "artifacts": list(self.artifacts),
            "wall_time": self.wall_time,
            "script_path": self.script_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExecutionResult":
        status = None if d["exit_status"] == "timeout" else d["exit_status"]
        return cls(
            status,
            d["stdout"],
            d["stderr"],
            tuple(TracebackRecord.from_dict(t) for t in d["tracebacks"]),
            tuple(d["artifacts"]),
            d["wall_time"],
            d.get("script_path", ""),
        )


def _tail(stdout: str, stderr: str) -> list[str]:
    lines = [ln for ln in _combine(stdout, stderr).split("\n") if ln.strip()]
    return lines[-TAIL_LINES:] or ["(no output)"]


def _combine(stdout: str, stderr: str) -> str:
    if stdout and stderr and not stdout.endswith("\n"):
        return stdout + "\n" + stderr
    return stdout + stderr


def _snapshot(root: Path) -> dict[str, tuple[int, int]]:
    snap = {}
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            p = Path(dirpath) / name
            try:
                st = p.stat()
            except OSError:
                continue
            snap[p.relative_to(root).as_posix()] = (st.st_mtime_ns, st.st_size)
    return snap


def _decode(data: bytes | str | None) -> str:
    if data is None:
        return ""
    if isinstance(data, str):
        return data
    return data.decode("utf-8", errors="replace")


def run_script(script, config: ExecConfig, script_name: str | None = None) -> ExecutionResult:
    """Write ``script`` into the work dir and run it with the interpreter.

    ``artifacts`` lists files under the work dir that were created or
    rewritten during the run, excluding the script itself.
    """
    text = script.text if hasattr(script, "text") else str(script)
    work = Path(config.work_dir)
    exe = shutil.which(config.interpreter_cmd[0])
    if exe is None:
        raise InterpreterNotFound(config.interpreter_cmd[0])
    try:
        work.mkdir(parents=True, exist_ok=True)
        if script_name:
            path = work / script_name
            path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        else:
            fd, name = tempfile.mkstemp(prefix="script_", suffix=".py", dir=work)
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text if text.endswith("\n") else text + "\n")
            path = Path(name)
    except OSError as e:
        raise WorkDirUnwritable(f"{work}: {e}") from e

    before = _snapshot(work)
    argv = [exe, *config.interpreter_cmd[1:], str(path.resolve())]
    start = time.monotonic()
    proc = subprocess.Popen(
        argv,
        cwd=work,
        stdin=subprocess.DEVNULL,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    try:
        out, err = proc.communicate(timeout=config.timeout)
        status: int | None = proc.returncode
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        out, err = proc.communicate()
        status = None
    wall = time.monotonic() - start

    after = _snapshot(work)
    script_rel = path.resolve().relative_to(work.resolve()).as_posix()
    artifacts = sorted(p for p, sig in after.items() if p != script_rel and before.get(p) != sig)
    stdout, stderr = _decode(out), _decode(err)
    return ExecutionResult(
        status,
        stdout,
        stderr,
        tuple(extract_tracebacks(_combine(stdout, stderr))),
        tuple(artifacts),
        wall,
        script_rel,
    )


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()
