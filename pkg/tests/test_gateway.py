import json

import httpx
import numpy as np
import pytest

from cogniloop import gateway
from cogniloop.errors import (
    DimensionDrift,
    MissingImage,
    ProtocolError,
    ScriptExhausted,
    TransportError,
    UnscriptedCall,
)
from cogniloop.gateway import ChatReply
from cogniloop.media import FrameIndexTable, FrameRef
from cogniloop.mock import MockCaptioner, MockChat, MockEmbedder, MockScript, MockVqa, mock_suite
from cogniloop.remote import HttpChatBackend, HttpEmbeddingBackend, HttpVisionBackend
from cogniloop.trace import SessionTrace

USER = [{"role": "user", "content": "hello"}]


@pytest.fixture
def trace():
    t = SessionTrace(sample_id="t")
    with t.activated():
        yield t


@pytest.fixture
def frames():
    return FrameIndexTable.synthetic("clip", 1.0, 60).frames


class TestChat:
    def test_scripted_echo(self, trace):
        chat = MockChat(MockScript(chat_responses=["Decision: terminate\nFinal Answer: 2"]))
        ex = gateway.chat(chat, USER)
        assert ex.reply == "Decision: terminate\nFinal Answer: 2"
        assert ex.temperature == 0.0

    def test_repeated_calls_identical(self, trace):
        script = MockScript(chat_responses=[{"pattern": "hello", "reply": "same"}])
        chat = MockChat(script)
        assert {gateway.chat(chat, USER).reply for _ in range(5)} == {"same"}

    def test_usage_accumulates(self, trace):
        chat = MockChat(
            MockScript(chat_responses=[{"reply": "a", "usage": [100, 50]}, {"reply": "b", "usage": [200, 30]}])
        )
        gateway.chat(chat, USER)
        gateway.chat(chat, USER)
        prompt = sum(e.tokens["prompt"] for e in trace.events)
        completion = sum(e.tokens["completion"] for e in trace.events)
        assert (prompt, completion) == (300, 80)
        assert trace.llm_tokens() == 380
        assert not any(e.tokens["estimated"] for e in trace.events)

    def test_estimated_usage_is_flagged(self, trace):
        ex = gateway.chat(MockChat(MockScript(chat_responses=["one two three"])), USER)
        assert ex.estimated and ex.usage == (1, 3)
        assert trace.events[0].tokens["estimated"] is True

    def test_exhausted(self, trace):
        chat = MockChat(MockScript(chat_responses=["only"]))
        gateway.chat(chat, USER)
        with pytest.raises(ScriptExhausted):
            gateway.chat(chat, USER)

    def test_rule_queue_exhausts(self, trace):
        chat = MockChat(MockScript(chat_responses=[{"pattern": "hello", "reply": ["x"]}]))
        assert gateway.chat(chat, USER).reply == "x"
        with pytest.raises(ScriptExhausted):
            gateway.chat(chat, USER)

    def test_preconditions(self, trace):
        chat = MockChat(MockScript(chat_responses=["x"]))
        with pytest.raises(ValueError):
            gateway.chat(chat, [])
        with pytest.raises(ValueError):
            gateway.chat(chat, [{"role": "assistant", "content": "x"}])
        assert trace.events == []


class TestVision:
    def test_caption_and_override(self, trace, frames):
        script = MockScript(caption_map={"clip@46.00": "a boy holds a bag"})
        assert gateway.caption(MockCaptioner(script), frames[46]) == "a boy holds a bag"
        script.hallucination_overrides.append({"frame": "clip@46.00", "caption": "a boy holds a teddy bear"})
        assert gateway.caption(MockCaptioner(script), frames[46]) == "a boy holds a teddy bear"
        assert [e.frames for e in trace.events] == [[46.0], [46.0]]
        assert {e.category for e in trace.events} == {"caption"}

    def test_wildcard_key(self, trace, frames):
        script = MockScript(caption_map={"*@3.00": "wild"})
        assert gateway.caption(MockCaptioner(script), frames[3]) == "wild"

    def test_strict_unmapped(self, trace, frames):
        with pytest.raises(UnscriptedCall):
            gateway.caption(MockCaptioner(MockScript()), frames[1])

    def test_vqa(self, trace, frames):
        script = MockScript(vqa_map=[{"frame": "clip@46.00", "pattern": "teddy bear", "answer": "No, it is a bag"}])
        vqa = MockVqa(script)
        assert gateway.vqa(vqa, frames[46], "Is that a teddy bear?") == "No, it is a bag"
        assert trace.events[0].category == "qa"
        assert trace.events[0].payload["question"] == "Is that a teddy bear?"
        with pytest.raises(ValueError):
            gateway.vqa(vqa, frames[46], "")

    def test_missing_image_for_file_backends(self, trace):
        class NeedsFiles:
            backend_id = "files"
            needs_image_files = True

            def describe(self, frame, prompt):
                return "never"

        with pytest.raises(MissingImage):
            gateway.caption(NeedsFiles(), FrameRef("v", 0, 0.0, "/nonexistent.jpg"))


class TestEmbeddings:
    def test_basis_vectors_and_order(self, trace, frames):
        script = MockScript(
            embedding_map={"clip@3.00": [0, 0, 1], "clip@1.00": [1, 0, 0], "text:bag": [0, 1, 0]}
        )
        emb = MockEmbedder(script)
        out = gateway.embed_frames(emb, [frames[3], frames[1]])
        assert [v.tolist() for v in out] == [[0, 0, 1], [1, 0, 0]]
        assert gateway.embed_text(emb, "bag").tolist() == [0, 1, 0]
        assert [e.category for e in trace.events] == ["embedding", "embedding"]

    def test_dimension_drift(self, trace, frames):
        emb = MockEmbedder(MockScript(embedding_map={"clip@1.00": [1, 0], "text:q": [1, 0, 0]}))
        gateway.embed_frames(emb, [frames[1]])
        with pytest.raises(DimensionDrift):
            gateway.embed_text(emb, "q")

    def test_non_strict_defaults_are_deterministic(self, trace, frames):
        script = MockScript(strict=False, embedding_dim=8)
        a = gateway.embed_frames(MockEmbedder(script), frames[:3])
        b = gateway.embed_frames(MockEmbedder(script), frames[:3])
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert a[0].shape == (8,)


class Flaky:
    backend_id = "flaky"
    retry_backoff_s = 0.0

    def __init__(self, failures):
        self.failures = failures
        self.attempts = 0

    def complete(self, messages, temperature):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise TransportError("blip")
        return ChatReply("ok", 10, 2)


class TestRetries:
    def test_retries_do_not_duplicate_accounting(self, trace):
        backend = Flaky(failures=2)
        ex = gateway.chat(backend, USER)
        assert ex.reply == "ok" and backend.attempts == 3
        assert len(trace.events) == 1
        assert trace.events[0].tokens["prompt"] == 10
        assert trace.retries == 2

    def test_gives_up_after_two_retries(self, trace):
        backend = Flaky(failures=3)
        with pytest.raises(TransportError):
            gateway.chat(backend, USER)
        assert backend.attempts == 3
        assert trace.events == []


def test_suite_requires_all_roles():
    script = MockScript()
    suite = mock_suite(script)
    assert suite.chat.backend_id == "mock-llm"
    with pytest.raises(ValueError):
        gateway.BackendSuite(chat=suite.chat, captioner=None, vqa=suite.vqa, embedder=suite.embedder)


def test_scripted_latency_is_recorded(trace, frames):
    script = MockScript(caption_map={"clip@1.00": "x"}, latency={"caption": 0.5})
    gateway.caption(MockCaptioner(script), frames[1])
    assert trace.events[0].latency_s == 0.5


def test_mock_script_json_round_trip(tmp_path):
    script = MockScript(chat_responses=["a", {"pattern": "b", "reply": ["c"]}], caption_map={"v@1.00": "x"})
    script.save(tmp_path / "s.json")
    assert MockScript.load(tmp_path / "s.json") == script
    with pytest.raises(ValueError):
        MockScript.from_dict({"bogus": 1})


# -- HTTP -------------------------------------------------------------------


def make_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


class TestHttp:
    def test_chat_wire_format(self, trace):
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(
                200,
                json={
                    "choices": [{"message": {"role": "assistant", "content": "hi there"}}],
                    "usage": {"prompt_tokens": 7, "completion_tokens": 2},
                },
            )

        backend = HttpChatBackend("http://x/v1/chat/completions", "m", api_key="sk-secret", client=make_client(handler))
        ex = gateway.chat(backend, USER)
        assert seen["body"] == {"model": "m", "messages": USER, "temperature": 0.0}
        assert seen["auth"] == "Bearer sk-secret"
        assert ex.reply == "hi there" and ex.usage == (7, 2) and not ex.estimated
        assert "sk-secret" not in json.dumps([e.to_dict() for e in trace.events])

    def test_missing_usage_falls_back_to_estimate(self, trace):
        def handler(request):
            return httpx.Response(200, json={"choices": [{"message": {"content": "a b"}}]})

        ex = gateway.chat(HttpChatBackend("http://x", "m", client=make_client(handler)), USER)
        assert ex.estimated and ex.usage == (1, 2)

    def test_malformed_is_protocol_error(self, trace):
        def handler(request):
            return httpx.Response(200, json={"nope": 1})

        with pytest.raises(ProtocolError):
            gateway.chat(HttpChatBackend("http://x", "m", client=make_client(handler)), USER)

    def test_server_errors_retry_then_succeed(self, trace):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) < 3:
                return httpx.Response(503)
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        backend = HttpChatBackend("http://x", "m", client=make_client(handler), retry_backoff_s=0.0)
        assert gateway.chat(backend, USER).reply == "ok"
        assert len(calls) == 3 and trace.retries == 2 and len(trace.events) == 1

    def test_client_errors_do_not_retry(self, trace):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400, text="bad")

        with pytest.raises(ProtocolError):
            gateway.chat(HttpChatBackend("http://x", "m", client=make_client(handler)), USER)
        assert len(calls) == 1

    def test_vision_sends_image_part(self, trace, tmp_path):
        img = tmp_path / "f.jpg"
        img.write_bytes(b"\xff\xd8fake")
        frame = FrameRef("v", 0, 0.0, str(img))
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return httpx.Response(200, json={"choices": [{"message": {"content": "a dog"}}]})

        backend = HttpVisionBackend("http://x", "vlm", client=make_client(handler))
        assert gateway.caption(backend, frame, "Describe.") == "a dog"
        parts = bodies[0]["messages"][0]["content"]
        assert parts[0] == {"type": "text", "text": "Describe."}
        assert parts[1]["image_url"]["url"].startswith("data:image/jpeg;base64,")

        backend.image_transport = "path"
        gateway.vqa(backend, frame, "What animal?")
        assert bodies[1]["messages"][0]["content"][1]["image_url"]["url"] == "file://" + str(img)

    def test_embeddings_reordered_by_index(self, trace):
        def handler(request):
            body = json.loads(request.content)
            n = len(body["input"])
            data = [{"index": i, "embedding": [float(i), 1.0]} for i in range(n)]
            return httpx.Response(200, json={"data": list(reversed(data))})

        backend = HttpEmbeddingBackend("http://x", "e", client=make_client(handler))
        out = gateway.embed_text(backend, "q")
        assert out.tolist() == [0.0, 1.0]
