import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
SUITE = FIXTURES / "suite"
TRANSCRIPTS = FIXTURES / "transcripts"
LOGS = FIXTURES / "logs"
DOCS = FIXTURES / "docs"
STUB_INTERPRETER = (sys.executable, str(FIXTURES / "stub_pvpython.py"))


@pytest.fixture
def stub_interpreter():
    return STUB_INTERPRETER


class FakeProvider:
    """Scripted OpenAI-style endpoint. ``script`` is a list of (status, body) pairs;
    the last entry repeats once the list runs out."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        provider = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                provider.requests.append((self.path, dict(self.headers), body))
                status, payload = provider.script[min(len(provider.requests), len(provider.script)) - 1]
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def chat_body(content, id_="cmpl-1"):
    return {
        "id": id_,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 1},
    }


@pytest.fixture
def fake_provider():
    made = []

    def make(script):
        p = FakeProvider(script)
        made.append(p)
        return p

    yield make
    for p in made:
        p.close()


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, title):
        ACCEPTANCE_LINES[number] = (title, request.node)

    return record


def pytest_runtest_makereport(item, call):
    if call.when == "call":
        for number, (title, node) in list(ACCEPTANCE_LINES.items()):
            if node is item:
                ACCEPTANCE_LINES[number] = (title, "PASS" if call.excinfo is None else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        title, outcome = ACCEPTANCE_LINES[number]
        if not isinstance(outcome, str):
            outcome = "FAIL"
        terminalreporter.write_line(f"criterion {number}: {outcome}  {title}")
