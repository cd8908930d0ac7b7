import pytest
from hypothesis import given, settings, strategies as st

from visrag.corpus import API_DOC, CODE_SNIPPET, Corpus, DocChunk, chunk_docs
from visrag.generator import (
    FENCED,
    WHOLE_REPLY,
    ContextBundle,
    EmptyReply,
    Selection,
    UnresolvedChunk,
    build_generation_request,
    extract_script,
    format_context,
    retrieve_context,
)
from visrag.llm_gateway import ChatReply
from visrag.planner import OperationStep
from visrag.vecindex import HashingEmbedder, VectorIndex, build_index

from conftest import DOCS

EMB = HashingEmbedder()


def doc(symbol, text, kind=API_DOC, path="api.md"):
    return DocChunk(f"{path}:{symbol}", kind, path, text, symbol if kind == API_DOC else None, (1, 1))


@pytest.fixture(scope="module")
def small():
    chunks = (
        doc("Contour", "Contour isosurfaces of a scalar field"),
        doc("Slice", "Slice a dataset with a plane"),
        doc("Tube", "Tube filter wraps lines in tubes"),
        doc("snip", "Contour Show Render example", kind=CODE_SNIPPET, path="ex.py"),
    )
    c = Corpus(chunks, "fp")
    return c, build_index(c, EMB)


def test_no_steps_gives_empty_bundle(small):
    c, idx = small
    b = retrieve_context([], idx, c, EMB)
    assert not b and b.chunks == []


def test_exact_text_is_top_hit(small):
    c, idx = small
    b = retrieve_context([OperationStep(1, "Slice a dataset with a plane")], idx, c, EMB, k=2)
    sel = b.selections[0]
    assert sel.chunks[0].symbol == "Slice"
    assert sel.scores[0] == pytest.approx(1.0, abs=1e-9)


def test_duplicate_chunk_kept_under_first_step(small):
    c, idx = small
    steps = [OperationStep(1, "Tube filter"), OperationStep(2, "Tube filter wraps lines")]
    b = retrieve_context(steps, idx, c, EMB, k=1)
    assert [ch.symbol for ch in b.selections[0].chunks] == ["Tube"]
    assert b.selections[1].chunks == ()
    assert [ch.id for ch in b.chunks].count("api.md:Tube") == 1


def test_kind_filter(small):
    c, idx = small
    b = retrieve_context([OperationStep(1, "Contour Show Render example")], idx, c, EMB, k=4, kinds=[API_DOC])
    assert {ch.kind for ch in b.chunks} == {API_DOC}


def test_budget_drops_weakest(small):
    c, idx = small
    b = retrieve_context([OperationStep(1, "Contour isosurfaces")], idx, c, EMB, k=4, budget_chars=40)
    assert b.total_chars <= 40
    assert [ch.symbol for ch in b.chunks] == ["Contour"]


def test_unknown_chunk_id(small):
    c, _ = small
    idx = VectorIndex(["ghost"], EMB.embed_many(["Slice"]), EMB.tag)
    with pytest.raises(UnresolvedChunk):
        retrieve_context([OperationStep(1, "Slice")], idx, c, EMB)


@pytest.fixture(scope="module")
def fixture_docs():
    c = chunk_docs(DOCS)
    return c, build_index(c, EMB)


@settings(max_examples=25, deadline=None)
@given(
    queries=st.lists(st.sampled_from(["Contour", "Show the tube", "SaveScreenshot png", "Wavelet source", "clip plane"]), min_size=1, max_size=4),
    k=st.integers(1, 6),
    budget=st.integers(0, 3000),
)
def test_budget_and_uniqueness_hold(fixture_docs, queries, k, budget):
    c, idx = fixture_docs
    steps = [OperationStep(i, q) for i, q in enumerate(queries, 1)]
    b = retrieve_context(steps, idx, c, EMB, k=k, budget_chars=budget)
    ids = [ch.id for ch in b.chunks]
    assert len(ids) == len(set(ids))
    assert sum(len(ch.text) for ch in b.chunks) == b.total_chars <= budget
    for sel in b.selections:
        assert len(sel.chunks) <= k
        assert list(sel.scores) == sorted(sel.scores, reverse=True)


def test_empty_bundle_request_still_asks_for_one_block():
    r = build_generation_request("draw a sphere")
    assert "draw a sphere" in r.user
    assert "exactly one fenced code block" in r.system
    assert "Reference material" not in r.user


def test_context_marker_line():
    b = ContextBundle((Selection(OperationStep(1, "c"), (doc("Contour", "Contour(Input=src)"),), (0.9,)),), 18)
    r = build_generation_request("p", b)
    assert "### Contour (api-doc)\nContour(Input=src)" in r.user
    assert format_context(None) == ""


def test_system_message_is_stable():
    a = build_generation_request("one")
    b = build_generation_request("two", ContextBundle((Selection(OperationStep(1, "x"), (doc("Slice", "s"),)),), 1))
    assert a.system == b.system


def test_single_fenced_block():
    s = extract_script(ChatReply("Sure:\n```python\nfrom x import *\n```\nDone."))
    assert s.text == "from x import *" and s.origin == FENCED


def test_longest_block_wins():
    short = "a = 1 # 10"[:10]
    long = "b = 2\n" * 33 + "cc"
    assert len(short) == 10 and len(long) == 200
    s = extract_script(ChatReply(f"```\n{short}\n```\ntext\n```python\n{long}\n```"))
    assert s.text == long


def test_no_fences_gives_whole_reply():
    s = extract_script(ChatReply("print('hi')\n"))
    assert s.text == "print('hi')\n" and s.origin == WHOLE_REPLY


def test_empty_fence_falls_back():
    s = extract_script(ChatReply("```\n```\nSphere()"))
    assert s.origin == WHOLE_REPLY


def test_blank_reply():
    with pytest.raises(EmptyReply):
        extract_script(ChatReply("  \n"))


@given(st.text(alphabet=st.characters(blacklist_characters="`\r", blacklist_categories=("Cs",)), min_size=1).filter(str.strip))
def test_fenced_body_round_trips(body):
    body = body.rstrip("\n")
    s = extract_script(ChatReply(f"Here:\n```python\n{body}\n```\n"))
    assert s.text == body
