"""Annotation through an OpenAI-compatible chat completions endpoint."""

import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from gttt.annotator import prompts
from gttt.annotator.records import AnnotationRecord
from gttt.errors import ConfigError, ResponseParseError

logger = logging.getLogger(__name__)

ENV_API_KEY = "GTTT_LLM_API_KEY"
ENV_BASE_URL = "GTTT_LLM_BASE_URL"
FALLBACK_CONFIDENCE = 50.0
RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass
class EndpointConfig:
    base_url: str
    model: str = "gpt-3.5-turbo-0613"
    api_key: str | None = None
    temperature: float = 0.0
    timeout: float = 30.0
    parse_retries: int = 2
    transport_retries: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    concurrency: int = 4
    seed: int = 0

    @classmethod
    def from_env(cls, **overrides):
        base = overrides.pop("base_url", None) or os.environ.get(ENV_BASE_URL)
        if not base:
            raise ConfigError(f"LLM base URL not configured (set {ENV_BASE_URL})")
        key = overrides.pop("api_key", None) or os.environ.get(ENV_API_KEY)
        return cls(base_url=base, api_key=key, **overrides)


class TransportFailure(Exception):
    pass


class ChatClient:
    """Minimal chat-completions client with jittered exponential backoff."""

    def __init__(self, cfg, transport=None, sleep=time.sleep):
        self.cfg = cfg
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/"), headers=headers, timeout=cfg.timeout, transport=transport
        )
        self._sleep = sleep
        self._rng = random.Random(cfg.seed)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt):
        delay = min(self.cfg.backoff_max, self.cfg.backoff_base * 2 ** attempt)
        self._sleep(delay * (0.5 + self._rng.random() / 2))

    def complete(self, prompt):
        """Return ``(text, tokens)`` for a single-turn request."""
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        last = None
        for attempt in range(self.cfg.transport_retries + 1):
            try:
                resp = self._http.post("/v1/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        data = resp.json()
                        text = data["choices"][0]["message"]["content"] or ""
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportFailure(f"malformed completion payload: {exc}") from None
                    usage = data.get("usage") or {}
                    tokens = usage.get("total_tokens") or (len(prompt) + len(text)) // 4
                    return text, int(tokens)
                last = f"HTTP {resp.status_code}"
                if resp.status_code not in RETRY_STATUS:
                    break
            if attempt < self.cfg.transport_retries:
                logger.warning("chat request failed (%s), retry %d", last, attempt + 1)
                self._backoff(attempt)
        raise TransportFailure(last)


@dataclass
class AnnotationBatch:
    records: list
    budget_exhausted: bool = False
    skipped: list = field(default_factory=list)


def _neighbor_block(g, node, limit=10, text_chars=300):
    seen, frontier, out = {node}, [node], []
    for _ in range(2):
        nxt = []
        for u in frontier:
            for v in g.neighbors(u):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
                    out.append({"content": g.texts[v][:text_chars]})
        frontier = nxt
    return out[:limit]


def neighbor_summary(client, g, node, ledger=None, cache_dir=None):
    """Ask the model to summarize a node's 2-hop neighborhood, cached on disk."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"summary-{node}-{prompts.template_hash()}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["summary"]
    text, tokens = client.complete(prompts.build_summary_prompt(_neighbor_block(g, node)))
    if ledger is not None:
        ledger.add_tokens(tokens)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"node": node, "summary": text}), encoding="utf-8")
    return text


def annotate_llm(nodes, g, kind, endpoint_cfg, ledger, categories, shots=(), gnn_pred=None,
                 fallback_labels=None, client=None, cache_dir=None):
    """Annotate ``nodes`` with one chat request each.

    Budget is reserved in node order before any request goes out, so with
    budget ``B`` exactly the first ``B`` nodes are sent. A reply that cannot
    be parsed is re-requested up to ``parse_retries`` times; after that the
    node gets the pretrained model's label (``fallback_labels``) with
    confidence 50. Transport failures yield a record with ``error`` set.
    """
    if g.texts is None:
        raise ConfigError("LLM annotation needs node texts")
    nodes = [int(v) for v in nodes]
    own_client = client is None
    client = client or ChatClient(endpoint_cfg)
    fallback = np.zeros(g.num_nodes, dtype=np.int64) if fallback_labels is None else np.asarray(fallback_labels)

    admitted, skipped = [], []
    for v in nodes:
        (admitted if ledger.try_reserve(1) else skipped).append(v)

    def work(v):
        hint = summary = None
        try:
            if kind == "few_shot_gnn":
                if gnn_pred is None:
                    raise ConfigError("few_shot_gnn needs the pretrained prediction")
                hint = (categories[int(gnn_pred.argmax()[v])], round(100 * float(gnn_pred.max_prob()[v]), 2))
            if kind == "few_shot_2hop":
                summary = neighbor_summary(client, g, v, ledger, cache_dir)
            prompt = prompts.build_prompt(kind, g.texts[v], categories, shots, hint, summary)
        except TransportFailure as exc:
            return AnnotationRecord(v, int(fallback[v]), 0.0, "llm", error=f"transport: {exc}")

        raw = None
        for attempt in range(endpoint_cfg.parse_retries + 1):
            try:
                raw, tokens = client.complete(prompt)
            except TransportFailure as exc:
                return AnnotationRecord(v, int(fallback[v]), 0.0, "llm", retries=attempt, error=f"transport: {exc}")
            ledger.add_tokens(tokens)
            try:
                label, conf = prompts.parse_llm_response(raw, categories)
            except ResponseParseError as exc:
                logger.info("node %d: unparseable reply (%s)", v, exc)
                continue
            if attempt:
                logger.info("node %d: parsed after %d retries", v, attempt)
            return AnnotationRecord(v, label, conf, "llm", raw_response=raw, retries=attempt)
        return AnnotationRecord(
            v, int(fallback[v]), FALLBACK_CONFIDENCE, "llm", raw_response=raw,
            retries=endpoint_cfg.parse_retries, fallback=True,
        )

    try:
        with ThreadPoolExecutor(max_workers=max(1, endpoint_cfg.concurrency)) as pool:
            records = list(pool.map(work, admitted))
    finally:
        if own_client:
            client.close()
    return AnnotationBatch(records, budget_exhausted=bool(skipped), skipped=skipped)


class LlmAnnotator:
    """``annotate(nodes)`` adapter used by the adaptation pipeline."""

    def __init__(self, g, kind, endpoint_cfg, ledger, categories, shots=(), gnn_pred=None,
                 client=None, cache_dir=None):
        self.g, self.kind, self.cfg, self.ledger = g, kind, endpoint_cfg, ledger
        self.categories, self.shots, self.gnn_pred = categories, shots, gnn_pred
        self.client, self.cache_dir = client, cache_dir
        self.last_batch = None

    def annotate(self, nodes):
        fallback = None if self.gnn_pred is None else self.gnn_pred.argmax()
        self.last_batch = annotate_llm(
            nodes, self.g, self.kind, self.cfg, self.ledger, self.categories, self.shots,
            self.gnn_pred, fallback, self.client, self.cache_dir,
        )
        return self.last_batch.records
