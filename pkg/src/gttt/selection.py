"""Budgeted selection of test nodes for annotation."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from gttt import kernels
from gttt.errors import ConvergenceError, ValidationError
from gttt.gnn import prediction_entropy
from gttt.graph import normalize_adjacency

BASELINE_KINDS = ("random", "density", "degree", "entropy", "pagerank", "featprop")
# Scores equal to this many decimals count as ties (broken by node id), which
# keeps rankings stable under summation-order noise and node relabeling.
SCORE_DECIMALS = 9
KMEANS_ITERS = 50


@dataclass
class SelectionConfig:
    budget: int
    beta: float = 2.0
    alpha: float = 1.0
    damping: float = 0.85
    tol: float = 1e-8
    hops: int = 2
    max_iter: int = 1000
    seed: int = 0

    def validate(self, num_test=None):
        if self.budget < 1:
            raise ValidationError("budget must be >= 1")
        if self.beta < 1.0:
            raise ValidationError("beta must be >= 1")
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if not 0.0 < self.damping < 1.0:
            raise ValidationError("damping must be in (0, 1)")
        if self.hops < 0:
            raise ValidationError("hops must be >= 0")
        if num_test is not None and self.budget > num_test:
            raise ValidationError(f"budget {self.budget} exceeds test set size {num_test}")

    def pool_size(self, num_test):
        return min(math.ceil(self.beta * self.budget), num_test)


@dataclass
class SelectionResult:
    chosen: np.ndarray
    pool: np.ndarray
    uncertainty: np.ndarray
    composite: np.ndarray

    def to_json(self, config=None):
        return {
            "chosen": self.chosen.tolist(),
            "Q": self.uncertainty.tolist(),
            "F": self.composite.tolist(),
            "config": asdict(config) if config is not None else {},
        }


def rank_desc(ids, scores):
    """Ids ordered by descending score, ties by ascending id."""
    ids = np.asarray(ids, dtype=np.int64)
    s = np.round(np.asarray(scores, dtype=np.float64), SCORE_DECIMALS)
    return ids[np.lexsort((ids, -s))]


def pagerank_scores(g, damping=0.85, tol=1e-8, max_iter=1000):
    if not 0.0 < damping < 1.0:
        raise ValidationError("damping must be in (0, 1)")
    scores, iters, residual = kernels.pagerank_power(g.csr_offsets, g.csr_targets, damping, tol, max_iter)
    if residual >= tol:
        raise ConvergenceError(f"PageRank did not converge in {iters} iterations", residual)
    return scores


def propagate_features(g, hops, adj=None):
    adj = adj if adj is not None else normalize_adjacency(g)
    x = g.features
    for _ in range(hops):
        x = adj.matmul(x)
    return x


def kmeans(points, k, seed, iters=KMEANS_ITERS):
    """Lloyd's algorithm from ``k`` distinct seeded points; empty clusters keep their centroid."""
    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(len(points), size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids


def featprop_scores(g, candidates, hops, K, seed, adj=None):
    """Representativeness of each candidate: ``1 / (1 + distance to nearest centroid)``.

    Features are propagated ``hops`` times, clustered into ``K`` groups
    over the candidate rows, and the scores are divided by their max.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        raise ValidationError("no candidates")
    if not 1 <= K <= len(candidates):
        raise ValidationError(f"K={K} must be in [1, {len(candidates)}]")
    pts = propagate_features(g, hops, adj)[candidates]
    centroids = kmeans(pts, K, seed)
    dist = np.sqrt(((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).min(axis=1))
    score = 1.0 / (1.0 + dist)
    return score / score.max()


def _max_normalize(x):
    m = x.max()
    return x / m if m > 0 else np.zeros_like(x)


def hybrid_select(g, pred, test_mask, cfg, adj=None):
    """Two-step selection: an uncertainty pool, then structure/feature ranking.

    Step 1 keeps the ``ceil(beta * B)`` test nodes with the highest
    prediction entropy. Step 2 ranks the pool by
    ``pagerank + alpha * featprop`` (both max-normalized over the pool) and
    returns the top ``B``. Ties in step 2 fall back to the step-1 order
    (entropy, then id), so a flat composite reduces to entropy selection.
    """
    test_ids = np.flatnonzero(test_mask)
    cfg.validate(len(test_ids))
    if pred.probs.shape[0] != g.num_nodes:
        raise ValidationError("prediction must cover every node")
    q = prediction_entropy(pred)
    pool = rank_desc(test_ids, q[test_ids])[: cfg.pool_size(len(test_ids))]

    pr = pagerank_scores(g, cfg.damping, cfg.tol, cfg.max_iter)
    f = _max_normalize(pr[pool])
    if cfg.alpha > 0:
        f = f + cfg.alpha * featprop_scores(g, pool, cfg.hops, cfg.budget, cfg.seed, adj)
    composite = np.full(g.num_nodes, np.nan)
    composite[pool] = f
    qp = np.round(q[pool], SCORE_DECIMALS)
    order = np.lexsort((pool, -qp, -np.round(f, SCORE_DECIMALS)))
    chosen = pool[order][: cfg.budget]
    return SelectionResult(chosen, pool, q, composite)


def density_scores(features, candidates, k=10):
    """Inverse mean distance to the ``k`` nearest other candidates in feature space."""
    pts = features[candidates]
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    k = min(k, len(candidates) - 1)
    if k < 1:
        return np.ones(len(candidates))
    mean_knn = np.sort(d, axis=1)[:, :k].mean(axis=1)
    return 1.0 / (mean_knn + 1e-12)


def baseline_select(kind, g, pred, test_mask, budget, seed, hops=2, damping=0.85, tol=1e-8):
    test_ids = np.flatnonzero(test_mask)
    if kind not in BASELINE_KINDS:
        raise ValidationError(f"unknown selection kind {kind!r}; expected one of {BASELINE_KINDS}")
    if not 1 <= budget <= len(test_ids):
        raise ValidationError(f"budget {budget} must be in [1, {len(test_ids)}]")
    if kind == "random":
        return np.sort(np.random.default_rng(seed).choice(test_ids, size=budget, replace=False))
    if kind == "degree":
        scores = g.degrees()[test_ids]
    elif kind == "density":
        scores = density_scores(g.features, test_ids)
    elif kind == "entropy":
        scores = prediction_entropy(pred)[test_ids]
    elif kind == "pagerank":
        scores = pagerank_scores(g, damping, tol)[test_ids]
    else:
        scores = featprop_scores(g, test_ids, hops, budget, seed)
    return rank_desc(test_ids, scores)[:budget]
