import json
import shlex
import shutil
import subprocess
import sys

import pytest

from visrag.cli import main

from conftest import DOCS, LOGS, STUB_INTERPRETER, SUITE, TRANSCRIPTS

STUB = shlex.join(STUB_INTERPRETER)


@pytest.fixture(autouse=True)
def no_ambient_settings(monkeypatch, tmp_path):
    for var in ("LLM_BASE_URL", "LLM_API_KEY", "LLM_MODEL", "CHATVIS_INTERPRETER", "CHATVIS_LPIPS"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.chdir(tmp_path)


def test_score_identical(capsys):
    png = SUITE / "sphere-iso" / "ground_truth.png"
    assert main(["score", str(png), str(png)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["ssim=1.0", "psnr=inf"]


def test_score_json(capsys):
    a, b = SUITE / "sphere-iso" / "ground_truth.png", SUITE / "color-blocks" / "ground_truth.png"
    assert main(["score", str(a), str(b), "--json", "--resize"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert set(d) == {"ssim", "psnr"} and d["ssim"] < 1.0


def test_score_shape_mismatch_is_operational_error():
    a, b = SUITE / "sphere-iso" / "ground_truth.png", SUITE / "ocean-tubes" / "ground_truth.png"
    assert main(["score", str(a), str(b)]) == 1


def test_extract_errors(capsys):
    assert main(["extract-errors", str(LOGS / "name_error.log")]) == 0
    records = json.loads(capsys.readouterr().out)
    assert len(records) == 1 and records[0]["error_class"] == "NameError"


def test_extract_errors_stdin(monkeypatch, capsys):
    import io

    monkeypatch.setattr(sys, "stdin", io.StringIO((LOGS / "clean.log").read_text()))
    assert main(["extract-errors", "-"]) == 0
    assert json.loads(capsys.readouterr().out) == []


def test_gen_without_prompt_is_usage_error(tmp_path):
    assert main(["gen", "--mode", "fewshot", "--out", str(tmp_path / "o")]) == 2


def test_unknown_command():
    assert main(["frobnicate"]) == 2


def test_ingest_then_rag_gen(tmp_path, capsys):
    idx = tmp_path / "idx" / "index.jsonl"
    assert main(["ingest", "--docs", str(DOCS), "--index", str(idx)]) == 0
    assert idx.exists() and (tmp_path / "idx" / "index.corpus.jsonl").exists()
    out = tmp_path / "gen"
    shutil.copytree(SUITE / "sphere-iso", out)
    code = main([
        "gen", "--mode", "rag", "--prompt-file", str(out / "full_prompt.txt"), "--out", str(out),
        "--expected-artifact", "iso.png", "--transcript", str(TRANSCRIPTS / "sphere-iso__rag__full.jsonl"),
        "--interpreter", STUB, "--index", str(idx),
    ])
    assert code == 0
    session = json.loads((out / "session.json").read_text())
    assert session["status"] == "Success"
    assert (out / "script.py").exists() and (out / "iso.png").exists()


def test_fewshot_gen_needs_no_index(tmp_path):
    out = tmp_path / "gen"
    code = main([
        "gen", "--mode", "fewshot", "--prompt", "Make a sphere contour", "--out", str(out),
        "--expected-artifact", "iso.png", "--transcript", str(TRANSCRIPTS / "sphere-iso__fewshot__full.jsonl"),
        "--interpreter", STUB, "--index", str(tmp_path / "absent.jsonl"),
    ])
    assert code == 0


def test_failed_gen_exits_nonzero(tmp_path):
    code = main([
        "gen", "--mode", "fewshot", "--prompt", "tubes", "--out", str(tmp_path / "g"),
        "--expected-artifact", "ocean.png", "--transcript", str(TRANSCRIPTS / "ocean-tubes__fewshot__full.jsonl"),
        "--interpreter", STUB,
    ])
    assert code == 1
    assert json.loads((tmp_path / "g" / "session.json").read_text())["status"] == "Exhausted"


def test_rag_bench_without_index_is_usage_error(tmp_path, capsys):
    code = main([
        "bench", "--suite", str(SUITE), "--modes", "rag", "--variants", "full", "--out", str(tmp_path / "b"),
        "--transcripts", str(TRANSCRIPTS), "--interpreter", STUB, "--index", str(tmp_path / "absent.jsonl"),
    ])
    assert code == 2
    assert "ingest" in capsys.readouterr().err


def test_fewshot_bench_without_index(tmp_path, capsys):
    code = main([
        "bench", "--suite", str(SUITE), "--modes", "fewshot", "--variants", "full", "--out", str(tmp_path / "b"),
        "--transcripts", str(TRANSCRIPTS), "--interpreter", STUB, "--no-figure",
    ])
    assert code == 0
    assert "| fewshot | full | 66.7 |" in capsys.readouterr().out
    assert (tmp_path / "b" / "report.csv").exists() and not (tmp_path / "b" / "report.png").exists()


def test_credential_in_settings_file_is_ignored(tmp_path, capsys):
    (tmp_path / "chatvis.toml").write_text('base_url = "http://127.0.0.1:9"\napi_key = "from-file"\n')
    argv = ["--config", str(tmp_path / "chatvis.toml"), "gen", "--mode", "fewshot", "--prompt", "x", "--out", str(tmp_path / "g"), "--interpreter", STUB]
    assert main(argv) == 2
    assert "no credential: set LLM_API_KEY" in capsys.readouterr().err


def test_unreachable_endpoint_is_operational_failure(tmp_path, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    (tmp_path / "chatvis.toml").write_text('base_url = "http://127.0.0.1:9"\n')
    argv = ["--config", str(tmp_path / "chatvis.toml"), "gen", "--mode", "fewshot", "--prompt", "x", "--out", str(tmp_path / "g"), "--interpreter", STUB]
    assert main(argv) == 1
    assert json.loads((tmp_path / "g" / "session.json").read_text())["status"] == "GatewayFailure"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "visrag", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("ingest", "gen", "bench", "score", "extract-errors"):
        assert cmd in proc.stdout


def test_relative_interpreter_arguments_survive_the_work_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(SUITE.parent.parent.parent)
    out = tmp_path / "g"
    code = main([
        "gen", "--mode", "fewshot", "--prompt", "sphere", "--out", str(out), "--expected-artifact", "iso.png",
        "--transcript", str(TRANSCRIPTS / "sphere-iso__fewshot__full.jsonl"),
        "--interpreter", f"{shlex.quote(sys.executable)} tests/fixtures/stub_pvpython.py",
    ])
    assert code == 0
