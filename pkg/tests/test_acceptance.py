"""Exit criteria for the package, one test per criterion.

Run with ``pytest -m acceptance``; the terminal summary ends with one
PASS/FAIL line per criterion.
"""

import json
import random
import time

import numpy as np
import pytest

from cogniloop import scenarios
from cogniloop.agents import parse_action, parse_decision, parse_final_answer, parse_key_information, run_session
from cogniloop.cli import EXIT_OK, main
from cogniloop.config import SessionConfig
from cogniloop.errors import GrammarMismatch, MalformedAgentOutput
from cogniloop.grammar import DIVERGENT_SEARCH, SPATIAL_FOCUS, TEMPORAL_FOCUS, parse_tool_input
from cogniloop.harness import Sample, frames_metric, run_benchmark
from cogniloop.kernels import SimilarityProfile, kmeans, segment_watershed, select_peak_representatives, select_topk
from cogniloop.media import FrameIndexTable
from cogniloop.mock import MockChat, MockScript, mock_suite
from cogniloop.trace import CATEGORIES, SessionTrace

import oracles
from stub_server import StubServer
from test_tools import BIMODAL, bimodal_setup


def profile_of(values):
    n = len(values)
    return SimilarityProfile(
        span=(0.0, float(n - 1)),
        timestamps=tuple(float(i) for i in range(n)),
        raw=tuple(values),
        smoothed=tuple(values),
        threshold=float(np.mean(values)),
    )


@pytest.mark.acceptance(1, "watershed selection equals brute-force oracle on 200 sequences in < 1 s")
def test_c1_watershed_oracle():
    rng = random.Random(20240601)
    cases = []
    for _ in range(200):
        n = rng.randint(1, 64)
        values = [rng.random() for _ in range(n)]
        # coarse quantisation produces plateaus and ties as well
        if rng.random() < 0.3:
            values = [round(v * 4) / 4 for v in values]
        cases.append((values, rng.randint(1, 8)))
    start = time.perf_counter()
    got = []
    for values, n_f in cases:
        profile = profile_of(values)
        got.append(select_peak_representatives(profile, segment_watershed(profile.smoothed, profile.threshold), n_f))
    elapsed = time.perf_counter() - start
    expected = [oracles.watershed_select(values, n_f) for values, n_f in cases]
    assert got == expected
    assert elapsed < 1.0


def _region_count(indices, smoothed):
    runs = oracles.maximal_runs(smoothed, sum(smoothed) / len(smoothed))
    return len({next(r for r in runs if r[0] <= i <= r[1]) for i in indices})


@pytest.mark.acceptance(2, "bimodal profile: watershed spans 2 regions, top-k stays in 1")
def test_c2_strategy_divergence():
    smoothed = oracles.moving_average(BIMODAL, 5)
    profile = profile_of(smoothed)
    ws = select_peak_representatives(profile, segment_watershed(profile.smoothed, profile.threshold), 2)
    tk = select_topk(profile, 2)
    assert _region_count(ws, smoothed) == 2
    assert _region_count(tk, smoothed) == 1

    trace = SessionTrace("c2")
    with trace.activated():
        from cogniloop.tools import divergent_search

        table, suite = bimodal_setup()
        ws_obs = divergent_search("peak", (0.0, 23.0), table, suite, n_f=2, strategy="watershed")
        tk_obs = divergent_search("peak", (0.0, 23.0), table, suite, n_f=2, strategy="topk")
    assert _region_count([f.index for f in ws_obs.frames_touched], smoothed) == 2
    assert _region_count([f.index for f in tk_obs.frames_touched], smoothed) == 1


@pytest.mark.acceptance(3, "k-means: oracle representatives, bitwise determinism, k clamps to point count")
def test_c3_kmeans():
    rng = np.random.default_rng(7)
    for trial in range(40):
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, 5))
        pts = rng.normal(size=(n, 3)).round(3)
        a = kmeans(pts, k, seed=trial)
        b = kmeans(pts, k, seed=trial)
        assert a.assignments == b.assignments
        assert a.centroids.tobytes() == b.centroids.tobytes()
        assert a.representatives == b.representatives
        assert a.k <= min(k, n)
        oracle = oracles.nearest_to_centroid(pts.tolist(), list(a.assignments))
        for c, rep in enumerate(a.representatives):
            assert a.assignments[rep] == c
            # exact distance ties (e.g. two members around their midpoint) may break either way
            mean = pts[np.asarray(a.assignments) == c].mean(axis=0)
            assert oracles.sq_dist(pts[rep], mean) <= oracles.sq_dist(pts[oracle[c]], mean) + 1e-12

    # well-separated blobs: partition equals the exhaustive optimum
    blobs = [(0, 0), (0.1, 0), (0, 0.1), (5, 5), (5.1, 5), (5, 5.2), (10, 0), (10.1, 0.1)]
    res = kmeans(blobs, 3, seed=1)
    best = oracles.best_partition(blobs, 3)
    same = lambda lab: {frozenset(i for i, x in enumerate(lab) if x == c) for c in set(lab)}
    assert same(res.assignments) == same(best)

    assert kmeans([(0.0,), (1.0,), (2.0,)], 5).k == 3


def _always_continue_script():
    return MockScript(
        strict=False,
        embedding_dim=4,
        chat_responses=[
            {"pattern": "perception budget is spent", "reply": "Decision: terminate\nFinal Answer: 2"},
            {"pattern": "Analyze working memory", "reply": "Decision: continue\nGuidance: keep looking"},
            {"pattern": "Perception Agent", "reply": "Tool Name: temporal_focus\nTool Input: [(0.0, 19.0)]"},
            {"pattern": "latest observation", "reply": "Key Information: NO"},
        ],
    )


@pytest.mark.acceptance(4, "defaults N_f=5, K_t=3, K_m=5, T_max=3; sessions never exceed 3 iterations")
def test_c4_config_fidelity():
    c = SessionConfig()
    assert (c.n_f, c.k_t, c.k_m, c.t_max) == (5, 3, 5, 3)
    table = FrameIndexTable.synthetic("c4", 1.0, 20)
    for verification in (True, False):
        for reflection in (True, False):
            cfg = SessionConfig(verification_enabled=verification, reflection_enabled=reflection)
            result = run_session(table, "q?", ["a", "b", "c"], cfg, mock_suite(_always_continue_script()))
            assert not result.failed and result.iterations == 3
            assert len(result.memory.entries) - 1 == 3
    assert run_session(
        scenarios.table(), scenarios.QUESTION, scenarios.OPTIONS, c, mock_suite(scenarios.script())
    ).iterations <= 3


MALFORMED = [
    (DIVERGENT_SEARCH, "person, (0.0, 90.0)"),
    (DIVERGENT_SEARCH, "('person', (90.0, 0.0))"),
    (DIVERGENT_SEARCH, "('person', (0.0, 90.0)) extra"),
    (DIVERGENT_SEARCH, "('', (0.0, 90.0))"),
    (DIVERGENT_SEARCH, "('person', (0.0 90.0))"),
    (TEMPORAL_FOCUS, "[(10.0, 30.0),]"),
    (TEMPORAL_FOCUS, "[]"),
    (TEMPORAL_FOCUS, "[(10.0, thirty)]"),
    (SPATIAL_FOCUS, "[(10.5, 'What is visible?')]"),
    (SPATIAL_FOCUS, "[('What is visible?' 10.5)]"),
    (SPATIAL_FOCUS, "[('unterminated, 10.5)]"),
    ("action", "Here you go:\nTool Name: divergent_search\nTool Input: ('person', (0.0, 90.0))"),
    ("action", "Tool Name: key_frames\nTool Input: ('person', (0.0, 90.0))"),
    ("action", "Tool Name: divergent_search"),
    ("key", "Key Information: PERHAPS"),
    ("key", "Key Information: YES\nVerification Questions: [('Only one?', 3.0)]"),
    ("key", "Key Information: NO\nVerification Questions: [('a?', 1.0), ('b?', 1.0)]"),
    ("decision", "Decision: terminate\nFinal Answer: 9"),
    ("decision", "Decision: terminate\nFinal Answer: [number 0-4]"),
    ("decision", "Final Answer: 2\nDecision: terminate\nDecision: continue"),
]


def _parse(kind, raw):
    if kind == "action":
        return parse_action(raw)
    if kind == "key":
        return parse_key_information(raw, 100.0)
    if kind == "decision":
        return parse_decision(raw, 5)
    return parse_tool_input(kind, raw)


@pytest.mark.acceptance(5, "grammar: documented examples round-trip; 20 malformed strings rejected")
def test_c5_grammar():
    assert parse_tool_input(DIVERGENT_SEARCH, "('person', (0.0, 90.0))") == ("person", (0.0, 90.0))
    assert parse_tool_input(TEMPORAL_FOCUS, "[(10.0, 30.0), (37.0, 47.5), (70.0, 78.0)]") == [
        (10.0, 30.0), (37.0, 47.5), (70.0, 78.0)
    ]
    assert parse_tool_input(
        SPATIAL_FOCUS, "[('What objects are visible in the scene?', 10.5), ('What color is the car?', 20.3)]"
    ) == [("What objects are visible in the scene?", 10.5), ("What color is the car?", 20.3)]
    assert parse_key_information("Key Information: NO", 100.0) == []
    assert [parse_final_answer(f"Final Answer: {i}", 5) for i in range(5)] == [0, 1, 2, 3, 4]

    assert len(MALFORMED) == 20
    for kind, raw in MALFORMED:
        with pytest.raises((GrammarMismatch, MalformedAgentOutput)):
            _parse(kind, raw)


def _scenario(verification):
    cfg = SessionConfig(verification_enabled=verification)
    return run_session(scenarios.table(), scenarios.QUESTION, scenarios.OPTIONS, cfg, mock_suite(scenarios.script()))


@pytest.mark.acceptance(6, "hallucination routing: verification flips the answer, deterministic, < 5 s")
def test_c6_hallucination_routing():
    start = time.perf_counter()
    on_a, on_b = _scenario(True), _scenario(True)
    off_a, off_b = _scenario(False), _scenario(False)
    elapsed = time.perf_counter() - start

    assert on_a.answer_index == scenarios.CORRECT
    assert off_a.answer_index == scenarios.FOOLED
    assert on_a.trace.to_lines() == on_b.trace.to_lines()
    assert off_a.trace.to_lines() == off_b.trace.to_lines()

    reloaded = SessionTrace.from_lines(on_a.trace.to_lines())
    annotations = [a for e in reloaded.memory["entries"] for a in e["annotations"]]
    assert {"claim": scenarios.HALLUCINATION, "verdict": "contradicted"}.items() <= next(
        a for a in annotations if a["verdict"] == "contradicted"
    ).items()
    assert elapsed < 5.0


@pytest.mark.acceptance(7, "frames metric = 10 on the routing trace (5 preview + 5 search, VQA overlaps); order-invariant")
def test_c7_frames_metric():
    trace = _scenario(True).trace
    preview = {float(f) for f in scenarios.SCENE_CENTERS}
    search = {float(f) for f in scenarios.SEARCH_PEAKS}
    vqa = {t for e in trace.events if e.category == "qa" for t in e.frames}
    assert vqa and vqa <= preview | search
    hand_count = len(preview | search | vqa)
    assert hand_count == 10
    assert frames_metric(trace) == hand_count

    rng = random.Random(3)
    for _ in range(20):
        events = list(trace.events)
        rng.shuffle(events)
        assert frames_metric(SessionTrace(events=events)) == hand_count
    assert frames_metric(_scenario(False).trace) <= frames_metric(trace)


def _samples(tmp_path, n):
    scenarios.table().save(tmp_path / "teddy.json")
    return [
        Sample(f"s{i:02d}", str(tmp_path / "teddy.json"), scenarios.QUESTION, scenarios.OPTIONS, i % 2)
        for i in range(n)
    ]


@pytest.mark.acceptance(8, "report means, LLM calls and tokens equal recomputation from raw traces")
def test_c8_accounting(tmp_path):
    samples = _samples(tmp_path, 5)
    out = tmp_path / "run"
    report = run_benchmark(samples, SessionConfig(), mock_suite(scenarios.script()), out, parallelism=3)
    traces = [SessionTrace.load(out / "traces" / f"{s.sample_id}.jsonl") for s in samples]
    ok = [t for t in traces if not t.failed]
    n = len(ok)
    assert n >= 4

    import math

    for c in CATEGORIES:
        per = [math.fsum(e.latency_s for e in t.events if e.category == c) for t in ok]
        assert report.mean_times[c] == math.fsum(per) / n
    assert report.mean_llm_calls == math.fsum(sum(1 for e in t.events if e.category == "llm") for t in ok) / n
    tokens = [
        sum(e.tokens["prompt"] + e.tokens["completion"] for e in t.events if e.category == "llm") for t in ok
    ]
    assert report.mean_llm_tokens == math.fsum(tokens) / n
    assert [r.llm_tokens for r in report.rows] == tokens
    assert report.accuracy == 100.0 * sum(t.answer_index == t.sample["answer_index"] for t in traces) / len(traces)

    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["mean_times"] == report.mean_times
    text = (out / "report.txt").read_text()
    for bucket in ("Embedding Time", "Retrieval Time", "Caption Time", "QA Time", "LLM"):
        assert bucket in text


class InterruptingChat(MockChat):
    def __init__(self, script, after):
        super().__init__(script)
        self.seen = 0
        self.after = after

    def complete(self, messages, temperature):
        self.seen += 1
        if self.seen > self.after:
            raise KeyboardInterrupt
        return super().complete(messages, temperature)


@pytest.mark.acceptance(9, "interrupted then resumed benchmark gives a byte-identical report")
def test_c9_resumability(tmp_path):
    samples = _samples(tmp_path, 4)
    clean = tmp_path / "clean"
    run_benchmark(samples, SessionConfig(), mock_suite(scenarios.script()), clean)

    resumed = tmp_path / "resumed"
    suite = mock_suite(scenarios.script())
    suite.chat = InterruptingChat(scenarios.script(), after=10)  # dies inside the second sample
    with pytest.raises(KeyboardInterrupt):
        run_benchmark(samples, SessionConfig(), suite, resumed)
    finished = sorted(p.name for p in (resumed / "traces").glob("*.jsonl"))
    assert finished == ["s00.jsonl"]
    assert not (resumed / "report.json").exists()

    run_benchmark(samples, SessionConfig(), mock_suite(scenarios.script()), resumed)
    assert (resumed / "report.json").read_bytes() == (clean / "report.json").read_bytes()
    assert (resumed / "report.txt").read_bytes() == (clean / "report.txt").read_bytes()


@pytest.mark.ffmpeg
@pytest.mark.acceptance(10, "ask against a chat-completions endpoint (local stub) completes with a well-formed trace")
def test_c10_live_smoke(make_clip, tmp_path, capsys):
    video = make_clip(4, "smoke")
    with StubServer() as server:
        base = server.base_url
        (tmp_path / "live.conf").write_text(
            f"chat_url = {base}/chat/completions\ncaption_url = {base}/chat/completions\n"
            f"vqa_url = {base}/chat/completions\nembed_url = {base}/embeddings\nk_m = 3\nn_f = 2\n"
        )
        code = main(
            ["ask", video, "What is shown?", "--options", "a test pattern,a cat",
             "--config", str(tmp_path / "live.conf"), "--trace", str(tmp_path / "t.jsonl"),
             "--workdir", str(tmp_path / "frames")]
        )
    assert code == EXIT_OK
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert records[0]["type"] == "header" and records[-1]["type"] == "end"
    trace = SessionTrace.from_lines(lines)
    assert trace.complete and not trace.failed and trace.answer_index in (0, 1)
    assert {e.category for e in trace.events} <= set(CATEGORIES)
