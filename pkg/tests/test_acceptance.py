"""The ten acceptance criteria, one test each.

Every test prints a single ``criterion N ...: PASS|FAIL`` line straight to
the terminal. Run alone with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""

import functools
import json
import math
import sys
import threading
import time

import httpx
import numpy as np
import pytest

import reference
from conftest import random_graph
from gttt.annotator import (
    AnnotationRecord,
    BudgetLedger,
    ChatClient,
    EndpointConfig,
    OracleConfig,
    annotate_llm,
    annotate_oracle,
    default_budget,
    render_response,
)
from gttt.bounds import eps_for_bound, hoeffding_bound, lemma2_montecarlo, omega_grid, theorem2_check, weight_radical
from gttt.cli import main
from gttt.experiment import run_benchmark
from gttt.gnn import GcnModel, Prediction, backward, prediction_entropy, softmax
from gttt.graph import normalize_adjacency
from gttt.selection import SelectionConfig, hybrid_select
from gttt.ttt import GaussianWeightState, coe, filter_scores, gaussian_weight, update_weight_state

SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


@functools.lru_cache(maxsize=None)
def bench(oracle_accuracy, stage2=True):
    """Per-seed metrics on the benchmark, plus wall time of the 5 runs."""
    t0 = time.perf_counter()
    kw = {} if stage2 else {"stage2_epochs": 0}
    runs = [run_benchmark(s, oracle_accuracy, **kw) for s in SEEDS]
    return runs, time.perf_counter() - t0


def final(runs):
    return np.array([r["acc_stage2"] for r in runs])


# 1 -------------------------------------------------------------------------

def test_c01_gradient_finite_differences(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        g = random_graph(20, 0.2, d=4, C=3, seed=100 + seed)
        m = GcnModel.init([4, 6, 3], seed, frozen_prefix=0)
        for b in m.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        adj = normalize_adjacency(g)
        mask = rng.random(20) < 0.7
        mask[0] = True
        w = rng.uniform(0.1, 1.0, 20)
        gr = backward(m, adj, g.features, g.labels, mask, w, frozen_prefix=0)
        for params, grads in ((m.weights, gr.weights), (m.biases, gr.biases)):
            for p, gp in zip(params, grads):
                for i in np.ndindex(p.shape):
                    old = p[i]
                    p[i] = old + 1e-6
                    lp = backward(m, adj, g.features, g.labels, mask, w, frozen_prefix=0).loss
                    p[i] = old - 1e-6
                    lm = backward(m, adj, g.features, g.labels, mask, w, frozen_prefix=0).loss
                    p[i] = old
                    num = (lp - lm) / 2e-6
                    worst = max(worst, abs(num - gp[i]) / max(abs(num), abs(gp[i]), 1e-8))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    assert report(1, "gradient check", ok, f"max rel err {worst:.2e}, {elapsed:.1f} s")


# 2 -------------------------------------------------------------------------

def test_c02_selection_brute_force(report):
    mismatches = []
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        n = int(rng.integers(8, 51))
        g = random_graph(n, float(rng.uniform(0.03, 0.3)), d=3, C=4, seed=seed)
        test = rng.random(n) < 0.6
        test[int(rng.integers(n))] = True
        B = int(rng.integers(1, int(test.sum()) + 1))
        beta, alpha = float(rng.uniform(1, 3)), float(rng.choice([0.0, 0.5, 1.0]))
        logits = rng.normal(0, 2, (n, 4))
        pred = Prediction(softmax(logits), logits)
        got = set(hybrid_select(g, pred, test, SelectionConfig(B, beta, alpha, tol=1e-12, seed=seed)).chosen.tolist())
        want = reference.select(reference.dense_adjacency(g), g.features, pred.probs,
                                np.flatnonzero(test).tolist(), B, beta, alpha, 0.85, 2, seed)
        if got != want:
            mismatches.append(seed)
    assert report(2, "selection oracle", not mismatches, f"{100 - len(mismatches)}/100 instances equal")


# 3 -------------------------------------------------------------------------

def test_c03_scalar_oracles(report):
    checks = {}
    q = prediction_entropy(Prediction(np.array([[0.5, 0.5], [0.7, 0.3]]), None))
    checks["entropy"] = max(abs(q[0] - math.log(2)), abs(q[1] - -(0.7 * math.log(0.7) + 0.3 * math.log(0.3))))
    h = lambda ps: -sum(p * math.log(p) for p in ps)  # noqa: E731
    checks["coe"] = max(abs(coe("AABB", "B") - (h([2 / 3, 1 / 3]) - math.log(2))),
                        abs(coe("AAAB", "B") - (0.0 - h([0.75, 0.25]))))
    recs = [AnnotationRecord(0, 0, 90.0, "oracle"), AnnotationRecord(1, 0, 60.0, "oracle"),
            AnnotationRecord(2, 1, 75.0, "oracle")]
    c0, c1 = h([0.5, 0.5]) - h([2 / 3, 1 / 3]), 0.0 - h([2 / 3, 1 / 3])
    want = [0.9 - 0.5 * c0, 0.6 - 0.5 * c0, 0.75 - 0.5 * c1]
    checks["score_filter"] = float(np.max(np.abs(filter_scores(recs, 0.5) - want)))
    checks["gaussian_weight"] = abs(gaussian_weight(0.7, GaussianWeightState(0.8, 0.01)) - math.exp(-0.5))
    st = update_weight_state(GaussianWeightState.initial(2, 0.999), [0.9, 0.9])
    checks["ema"] = max(abs(st.mu - 0.5004), abs(st.sigma2 - 0.999))
    table = {837: 83, 6001: 600, 847: 84, 3308: 330, 51480: 5148}
    checks["budget"] = max(abs(default_budget(k) - v) for k, v in table.items())
    bad = [k for k, v in checks.items() if not v <= 1e-9]
    worst = max(checks.values())
    assert report(3, "scalar oracles", not bad, f"max abs err {worst:.1e}" + (f", failing {bad}" if bad else ""))


# 4 -------------------------------------------------------------------------

def test_c04_weighted_bound_numeric(report):
    rng = np.random.default_rng(4)
    failures, off_grid = 0, 0
    for _ in range(1000):
        A, M, lam = rng.uniform(1e-3, 5), rng.uniform(1e-3, 5), rng.uniform(0.01, 0.99)
        if not theorem2_check(A, M, lam, grid=101)[2]:
            failures += 1
        grid = omega_grid(lam, 101)
        w_min = grid[int(np.argmin([weight_radical(w, lam) for w in grid]))]
        if abs(w_min - lam) > 1 / 100:
            off_grid += 1
    ok = failures == 0 and off_grid == 0
    assert report(4, "weighted-bound comparison", ok, f"{1000 - failures}/1000 hold, {off_grid} argmin misses")


# 5 -------------------------------------------------------------------------

def test_c05_hoeffding_montecarlo(report):
    settings = [
        ((0.5, 0.5), (0.5, 0.5), 200, eps_for_bound((0.5, 0.5), (0.5, 0.5), 200, 0.05)),
        ((0.3, 0.7), (0.9, 0.1), 500, eps_for_bound((0.3, 0.7), (0.9, 0.1), 500, 0.1)),
        ((0.8, 0.2), (0.5, 0.5), 1000, 0.04),
    ]
    trials, details, ok = 10_000, [], True
    for k, (w, lam, N, eps) in enumerate(settings):
        bound = hoeffding_bound(w, lam, N, eps)
        rate = lemma2_montecarlo(w, lam, N, eps, trials, seed=50 + k)
        p = min(bound, 1.0)
        limit = bound + 3 * math.sqrt(p * (1 - p) / trials)
        ok &= rate <= limit
        details.append(f"{rate:.4f}<={limit:.4f}")
    assert report(5, "Hoeffding Monte Carlo", ok, ", ".join(details))


# 6 -------------------------------------------------------------------------

def test_c06_end_to_end_gain(report):
    runs, elapsed = bench(0.9)
    gain = float(np.mean(final(runs) - np.array([r["acc_pretrained"] for r in runs])))
    ok = gain >= 0.02 and elapsed < 60
    assert report(6, "end-to-end gain", ok, f"mean gain {gain:+.4f} (need >= 0.02), {elapsed:.1f} s for 5 seeds")


# 7 -------------------------------------------------------------------------

def test_c07_oracle_accuracy_trend(report):
    f = {a: final(bench(a)[0]) for a in (1.0, 0.9, 0.6)}
    d_hi, d_lo = float(np.mean(f[1.0] - f[0.9])), float(np.mean(f[0.9] - f[0.6]))
    ok = d_hi >= 0 and d_lo >= 0
    means = ", ".join(f"a={a}: {f[a].mean():.4f}" for a in f)
    assert report(7, "oracle-accuracy trend", ok,
                  f"{means}; paired 1.0-0.9 {d_hi:+.4f}, 0.9-0.6 {d_lo:+.4f}")


# 8 -------------------------------------------------------------------------

def test_c08_two_stage_ablation(report):
    both, _ = bench(0.9)
    s1, _ = bench(0.9, stage2=False)
    pre = np.array([r["acc_pretrained"] for r in s1])
    d2, d1 = float(np.mean(final(both) - final(s1))), float(np.mean(final(s1) - pre))
    ok = d2 >= 0 and d1 >= 0
    assert report(8, "two-stage ablation", ok, f"both-stage1 {d2:+.4f}, stage1-pretrained {d1:+.4f}")


# 9 -------------------------------------------------------------------------

def test_c09_budget_safety(report):
    budget = 20
    requests = []
    lock = threading.Lock()

    def handler(request):
        with lock:
            requests.append(1)
        time.sleep(0.001)
        return httpx.Response(200, json={"choices": [{"message": {"content": render_response("b", 80)}}]})

    cfg = EndpointConfig("http://mock", concurrency=32)
    client = ChatClient(cfg, transport=httpx.MockTransport(handler))
    g = random_graph(64, 0.05, C=2, texts=True)
    ledger = BudgetLedger(budget)

    # 32 threads each try to annotate the whole node set against one shared ledger
    batches = []

    def attempt(i):
        batches.append(annotate_llm(list(range(64)), g, "zero_shot", cfg, ledger, ["a", "b"], client=client))

    threads = [threading.Thread(target=attempt, args=(i,)) for i in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    llm_ok = len(requests) == ledger.used == budget == sum(len(b.records) for b in batches)

    oracle_ledger = BudgetLedger(10)
    annotate_oracle(np.arange(10), np.zeros(10, int), OracleConfig(0.9), 2, oracle_ledger)
    oracle_ok = oracle_ledger.used == 10
    try:
        annotate_oracle([10], np.zeros(11, int), OracleConfig(), 2, oracle_ledger)
        oracle_ok = False
    except Exception:
        pass

    runs = [r for a in (1.0, 0.9, 0.6) for r in bench(a)[0]] + list(bench(0.9, stage2=False)[0])
    runs_ok = all(r["budget_used"] <= r["budget"] for r in runs)
    ok = llm_ok and oracle_ok and runs_ok
    assert report(9, "budget safety", ok,
                  f"{len(requests)} requests for B={budget} under 32 threads, "
                  f"{len(runs)} benchmark runs within budget: {runs_ok}")


# 10 ------------------------------------------------------------------------

def test_c10_determinism(report, tmp_path):
    from pathlib import Path

    cfg = Path(__file__).resolve().parents[1] / "configs" / "benchmark.toml"
    out = tmp_path / "det"
    codes, blobs = [], []
    for _ in range(2):
        codes.append(main(["run", "--config", str(cfg), "--pretrain", "--seed", "2", "--out", str(out)]))
        blobs.append((out / "metrics.json").read_bytes())
    ok = codes == [0, 0] and blobs[0] == blobs[1]
    keys = sorted(json.loads(blobs[0]))[:3]
    assert report(10, "determinism", ok, f"exit codes {codes}, identical bytes: {blobs[0] == blobs[1]} ({keys}...)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
