import json
import threading
from pathlib import Path

import httpx
import numpy as np
import pytest

from conftest import random_graph
from gttt.annotator import (
    PROMPT_KINDS,
    AnnotationRecord,
    BudgetLedger,
    ChatClient,
    EndpointConfig,
    OracleConfig,
    annotate_llm,
    annotate_oracle,
    append_records,
    build_prompt,
    default_budget,
    parse_llm_response,
    read_records,
    render_response,
)
from gttt.annotator.oracle import num_perturbed
from gttt.errors import BudgetExceededError, ConfigError, ResponseParseError, UnknownCategoryError, ValidationError

GOLDEN = Path(__file__).parent / "golden"
CATS = ["Neural_Networks", "Theory", "Rule_Learning"]
SHOTS = [("Backpropagation with momentum for deep nets.", "Neural_Networks"),
         ("PAC bounds for decision lists.", "Theory")]
TEXT = "We study gradient descent on two-layer networks."


# budget rule and ledger

@pytest.mark.parametrize("test_size,budget", [(837, 83), (6001, 600), (847, 84), (3308, 330), (51480, 5148), (10, 1), (3, 1)])
def test_default_budget(test_size, budget):
    assert default_budget(test_size) == budget


def test_ledger_reserve_and_refuse():
    led = BudgetLedger(3)
    led.reserve(2)
    assert not led.try_reserve(2)
    led.reserve(1)
    with pytest.raises(BudgetExceededError):
        led.reserve(1)
    assert led.used == 3 and led.remaining == 0


def test_ledger_32_threads():
    led = BudgetLedger(50)
    granted = []
    barrier = threading.Barrier(32)

    def worker():
        barrier.wait()
        got = sum(led.try_reserve(1) for _ in range(10))
        granted.append(got)

    threads = [threading.Thread(target=worker) for _ in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(granted) == 50 == led.used


def test_records_jsonl_roundtrip(tmp_path):
    recs = [AnnotationRecord(1, 0, 80.0, "oracle"), AnnotationRecord(4, 2, 55.5, "llm", raw_response="x", retries=1)]
    append_records(tmp_path / "a.jsonl", recs[:1])
    append_records(tmp_path / "a.jsonl", recs[1:])
    assert read_records(tmp_path / "a.jsonl") == recs
    assert read_records(tmp_path / "missing.jsonl") == []


def test_record_validation():
    with pytest.raises(ValidationError):
        AnnotationRecord(0, 0, 101.0, "oracle")
    with pytest.raises(ValidationError):
        AnnotationRecord(0, 0, 50.0, "human")


# oracle

def test_oracle_perfect():
    labels = np.arange(20) % 3
    recs = annotate_oracle(np.arange(20), labels, OracleConfig(1.0, seed=1), 3)
    assert all(r.pseudo_label == labels[r.node_id] for r in recs)
    assert all(70 <= r.confidence <= 100 and r.provenance == "oracle" for r in recs)


def test_oracle_exact_perturbation_count():
    labels = np.zeros(10, dtype=int)
    recs = annotate_oracle(np.arange(10), labels, OracleConfig(0.6, seed=3), 2)
    assert sum(r.pseudo_label != 0 for r in recs) == 4 == num_perturbed(0.6, 10)


def test_oracle_frequency():
    n = 10000
    labels = np.random.default_rng(0).integers(0, 5, n)
    recs = annotate_oracle(np.arange(n), labels, OracleConfig(0.9, seed=2), 5)
    acc = np.mean([r.pseudo_label == labels[r.node_id] for r in recs])
    assert abs(acc - 0.9) <= 0.005


def test_oracle_nested_flips():
    labels = np.arange(50) % 4
    wrong = {}
    for a in (1.0, 0.9, 0.6):
        recs = annotate_oracle(np.arange(50), labels, OracleConfig(a, seed=7), 4)
        wrong[a] = {r.node_id for r in recs if r.pseudo_label != labels[r.node_id]}
    assert wrong[1.0] <= wrong[0.9] <= wrong[0.6]


def test_oracle_charges_ledger():
    led = BudgetLedger(4)
    with pytest.raises(BudgetExceededError):
        annotate_oracle(np.arange(5), np.zeros(5, int), OracleConfig(), 2, led)
    assert led.used == 0


# prompts

@pytest.mark.parametrize("kind", PROMPT_KINDS)
def test_prompt_golden(kind):
    shots = () if kind == "zero_shot" else SHOTS
    hint = ("Neural_Networks", 87.5) if kind == "few_shot_gnn" else None
    summary = "Neighbors mostly discuss learning theory." if kind == "few_shot_2hop" else None
    got = build_prompt(kind, TEXT, CATS, shots, hint, summary)
    want = (GOLDEN / f"{kind}.txt").read_bytes().decode("utf-8")
    assert got == want


def test_zero_shot_has_no_examples():
    p = build_prompt("zero_shot", TEXT, CATS)
    assert "few-shot" not in p and "Category:" not in p


def test_gnn_prompt_sentence():
    p = build_prompt("few_shot_gnn", TEXT, CATS, SHOTS, ("Theory", 60))
    assert "The psuedo label generated by GCN is: Theory" in p
    assert "confidence of this pseudo-label is 60." in p


def test_prompt_requirements():
    with pytest.raises(ValidationError):
        build_prompt("few_shot", TEXT, CATS)
    with pytest.raises(ValidationError):
        build_prompt("few_shot_gnn", TEXT, CATS, SHOTS)
    with pytest.raises(ValidationError):
        build_prompt("chain_of_thought", TEXT, CATS)


# parsing

def test_parse_plain():
    assert parse_llm_response('[{"answer":"pos","confidence":90}]', ["pos", "neg"]) == (0, 90.0)


def test_parse_with_prose():
    raw = 'Sure. Based on the abstract:\n[{"answer": "neg", "confidence": 72}]\nHope this helps.'
    assert parse_llm_response(raw, ["pos", "neg"]) == (1, 72.0)


@pytest.mark.parametrize("raw,expected", [
    ("[{'answer': 'Theory', 'confidence': 65}]", (1, 65.0)),
    ('{"answer": "theory", "confidence": "80%"}', (1, 80.0)),
    ('answer: Rule_Learning, confidence: 33.5', (2, 33.5)),
    ('[{"answer":"Theory","confidence":150}]', (1, 100.0)),
    ('[{"answer":"Theory","confidence":-4}]', (1, 0.0)),
])
def test_parse_variants(raw, expected):
    assert parse_llm_response(raw, CATS) == expected


def test_parse_failures():
    with pytest.raises(ResponseParseError):
        parse_llm_response("I am not sure.", CATS)
    with pytest.raises(UnknownCategoryError):
        parse_llm_response('[{"answer":"Biology","confidence":90}]', CATS)


def test_render_then_parse():
    assert parse_llm_response(render_response("Rule_Learning", 42), CATS) == (2, 42.0)


# LLM client with a mock transport

def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 11}})


def scripted(replies, seen=None):
    it = iter(replies)
    lock = threading.Lock()

    def handler(request):
        if seen is not None:
            seen.append(json.loads(request.content))
        with lock:
            r = next(it)
        return r(request) if callable(r) else r

    return httpx.MockTransport(handler)


def llm_setup(transport, budget=10, **cfg_kw):
    cfg = EndpointConfig("http://mock", concurrency=1, backoff_base=0.0, **cfg_kw)
    client = ChatClient(cfg, transport=transport, sleep=lambda s: None)
    g = random_graph(6, 0.5, C=3, texts=True)
    return g, cfg, client, BudgetLedger(budget)


def test_llm_valid_payload():
    seen = []
    t = scripted([chat_reply(render_response("Theory", 91))] * 3, seen)
    g, cfg, client, led = llm_setup(t)
    batch = annotate_llm([0, 1, 2], g, "zero_shot", cfg, led, CATS, client=client)
    assert [r.provenance for r in batch.records] == ["llm"] * 3
    assert all(r.pseudo_label == 1 and r.confidence == 91.0 for r in batch.records)
    assert led.used == 3 and led.token_estimate == 33
    assert seen[0]["temperature"] == 0 and seen[0]["messages"][0]["role"] == "user"


def test_llm_garbage_then_valid():
    t = scripted([chat_reply("no idea"), chat_reply("still no"), chat_reply(render_response("Theory", 70))])
    g, cfg, client, led = llm_setup(t)
    batch = annotate_llm([4], g, "zero_shot", cfg, led, CATS, client=client)
    assert len(batch.records) == 1
    r = batch.records[0]
    assert r.retries == 2 and r.pseudo_label == 1 and not r.fallback


def test_llm_fallback_after_retries():
    t = scripted([chat_reply("nope")] * 3)
    g, cfg, client, led = llm_setup(t)
    batch = annotate_llm([2], g, "zero_shot", cfg, led, CATS, fallback_labels=np.full(6, 2), client=client)
    r = batch.records[0]
    assert r.fallback and r.pseudo_label == 2 and r.confidence == 50.0


def test_llm_budget_limits_requests():
    seen = []
    t = scripted([chat_reply(render_response("Theory", 80))] * 5, seen)
    g, cfg, client, led = llm_setup(t, budget=3)
    batch = annotate_llm([0, 1, 2, 3, 4], g, "zero_shot", cfg, led, CATS, client=client)
    assert len(seen) == 3
    assert [r.node_id for r in batch.records] == [0, 1, 2]
    assert batch.budget_exhausted and batch.skipped == [3, 4]


def test_llm_retries_transient_http_errors():
    t = scripted([httpx.Response(503), httpx.Response(429), chat_reply(render_response("Theory", 66))])
    g, cfg, client, led = llm_setup(t)
    r = annotate_llm([1], g, "zero_shot", cfg, led, CATS, client=client).records[0]
    assert r.ok and r.confidence == 66.0


def test_llm_transport_failure_marks_record():
    t = scripted([httpx.Response(401)])
    g, cfg, client, led = llm_setup(t)
    r = annotate_llm([1], g, "zero_shot", cfg, led, CATS, client=client).records[0]
    assert not r.ok and "HTTP 401" in r.error


def test_llm_concurrent_requests_respect_budget():
    seen = []
    t = scripted([chat_reply(render_response("Theory", 80))] * 40, seen)
    cfg = EndpointConfig("http://mock", concurrency=8, backoff_base=0.0)
    client = ChatClient(cfg, transport=t, sleep=lambda s: None)
    g = random_graph(40, 0.1, C=3, texts=True)
    led = BudgetLedger(17)
    batch = annotate_llm(list(range(40)), g, "zero_shot", cfg, led, CATS, client=client)
    assert len(seen) == 17 == len(batch.records) == led.used


def test_llm_two_hop_summary_cached(tmp_path):
    seen = []
    replies = [chat_reply("Mostly theory papers."), chat_reply(render_response("Theory", 77))] * 1
    replies += [chat_reply(render_response("Theory", 78))]
    t = scripted(replies, seen)
    g, cfg, client, led = llm_setup(t)
    annotate_llm([0], g, "few_shot_2hop", cfg, led, CATS, SHOTS, client=client, cache_dir=tmp_path)
    assert "Neighbor Summary: Mostly theory papers." in seen[1]["messages"][0]["content"]
    annotate_llm([0], g, "few_shot_2hop", cfg, led, CATS, SHOTS, client=client, cache_dir=tmp_path)
    assert len(seen) == 3  # second call reused the cached summary
    assert led.used == 2


def test_llm_requires_texts_and_base_url(monkeypatch):
    g = random_graph(4, 0.5)
    with pytest.raises(ConfigError):
        annotate_llm([0], g, "zero_shot", EndpointConfig("http://x"), BudgetLedger(1), CATS)
    monkeypatch.delenv("GTTT_LLM_BASE_URL", raising=False)
    with pytest.raises(ConfigError):
        EndpointConfig.from_env()
    monkeypatch.setenv("GTTT_LLM_BASE_URL", "http://env")
    monkeypatch.setenv("GTTT_LLM_API_KEY", "k")
    cfg = EndpointConfig.from_env()
    assert cfg.base_url == "http://env" and cfg.api_key == "k"
