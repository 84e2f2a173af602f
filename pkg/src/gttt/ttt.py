"""Test-time adaptation: annotation filtering, supervised fine-tuning, weighted self-training."""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from gttt.errors import ConfigError, NumericError, ValidationError
from gttt.gnn import Adam, accuracy, backward, forward
from gttt.graph import drop_edge, normalize_adjacency
from gttt.seeding import derive_seed
from gttt.selection import baseline_select, hybrid_select

logger = logging.getLogger(__name__)

FILTER_MODES = ("none", "conf_only", "conf_coe")


@dataclass
class FilterConfig:
    gamma: float = 0.5
    keep_ratio: float = 0.8

    def validate(self):
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValidationError("keep_ratio must be in (0, 1]")


@dataclass
class TttConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 30
    drop_rate: float = 0.3
    lr: float = 0.001
    gamma: float = 0.5
    keep_ratio: float = 0.8
    momentum: float = 0.999
    lambda_max: float = 1.0
    seed: int = 0

    def validate(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValidationError("drop_rate must be in [0, 1)")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must be in [0, 1)")
        if self.lambda_max <= 0:
            raise ValidationError("lambda_max must be > 0")
        self.filter_config().validate()

    def filter_config(self):
        return FilterConfig(self.gamma, self.keep_ratio)


# ------------------------------------------------------------------ filtering

def label_entropy(counts):
    counts = np.asarray([c for c in counts if c > 0], dtype=np.float64)
    if counts.sum() == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def coe(labels_pseudo, v_label):
    """Entropy of the label multiset without one ``v_label``, minus entropy with it."""
    counts = Counter(labels_pseudo)
    if sum(counts.values()) < 2:
        raise ValidationError("COE needs at least two labels")
    if counts[v_label] < 1:
        raise ValidationError(f"label {v_label} not in the multiset")
    before = label_entropy(counts.values())
    counts[v_label] -= 1
    return label_entropy(counts.values()) - before


def filter_scores(records, gamma):
    labels = [r.pseudo_label for r in records]
    coe_by_label = {y: coe(labels, y) for y in set(labels)}
    return np.array([r.confidence / 100.0 - gamma * coe_by_label[r.pseudo_label] for r in records])


def filter_annotations(records, cfg):
    """Keep the ``ceil(keep_ratio * n)`` records with the best confidence-minus-COE score."""
    cfg.validate()
    records = list(records)
    if len(records) < 2:
        raise ValidationError("filtering needs at least two annotations")
    scores = np.round(filter_scores(records, cfg.gamma), 12)
    ids = np.array([r.node_id for r in records])
    order = np.lexsort((ids, -scores))
    keep = math.ceil(cfg.keep_ratio * len(records) - 1e-9)
    return [records[i] for i in order[:keep]]


# ---------------------------------------------------- confidence weighting

@dataclass(frozen=True)
class GaussianWeightState:
    mu: float
    sigma2: float
    momentum: float = 0.999
    lambda_max: float = 1.0
    num_classes: int = 2

    @classmethod
    def initial(cls, num_classes, momentum=0.999, lambda_max=1.0):
        return cls(1.0 / num_classes, 1.0, momentum, lambda_max, num_classes)


def gaussian_weight(p_max, st):
    """``lambda_max`` above the running mean, a Gaussian falloff below it."""
    p = np.asarray(p_max, dtype=np.float64)
    w = np.where(p < st.mu, st.lambda_max * np.exp(-((p - st.mu) ** 2) / (2.0 * st.sigma2)), st.lambda_max)
    return float(w) if w.ndim == 0 else w


def update_weight_state(st, batch_pmax):
    """EMA of the batch mean and of the bias-corrected batch variance."""
    b = np.asarray(batch_pmax, dtype=np.float64)
    n = len(b)
    if n < 2:
        raise ValidationError("need at least two samples to update the weight state")
    mean = float(b.mean())
    var = float(np.mean((b - mean) ** 2))
    m = st.momentum
    return replace(
        st,
        mu=m * st.mu + (1.0 - m) * mean,
        sigma2=m * st.sigma2 + (1.0 - m) * (n / (n - 1.0)) * var,
    )


# ------------------------------------------------------------------ stages

def stage1_finetune(model, g, adj, filtered, cfg):
    """Adam on cross-entropy against the filtered pseudo-labels; returns a new model."""
    if not filtered:
        raise ValidationError("no filtered annotations to train on")
    model = model.copy()
    idx = np.array([r.node_id for r in filtered], dtype=np.int64)
    targets = np.zeros(g.num_nodes, dtype=np.int64)
    targets[idx] = [r.pseudo_label for r in filtered]
    opt = Adam(lr=cfg.lr)
    for epoch in range(cfg.stage1_epochs):
        grads = backward(model, adj, g.features, targets, idx)
        if not np.isfinite(grads.loss):
            raise NumericError(f"stage 1 loss diverged at epoch {epoch}")
        opt.step(model, grads, first_layer=model.frozen_prefix)
    return model


def stage2_selftrain(model, g, adj, unlabeled_mask, cfg, st=None):
    """Confidence-weighted consistency training on unlabeled test nodes.

    Each epoch the un-augmented prediction supplies hard targets and max
    probabilities; the weight state is updated from those, then the model
    is trained on a DropEdge view against the targets with per-node weights.
    Returns ``(model, state)``.
    """
    unl = np.flatnonzero(unlabeled_mask)
    if len(unl) == 0:
        raise ValidationError("unlabeled mask is empty")
    model = model.copy()
    st = st or GaussianWeightState.initial(g.num_classes, cfg.momentum, cfg.lambda_max)
    opt = Adam(lr=cfg.lr)
    for epoch in range(cfg.stage2_epochs):
        pred = forward(model, adj, g.features)
        pmax, targets = pred.max_prob(), pred.argmax()
        st = update_weight_state(st, pmax[unl])
        weights = np.zeros(g.num_nodes)
        weights[unl] = gaussian_weight(pmax[unl], st)
        aug = g if cfg.drop_rate == 0 else drop_edge(g, cfg.drop_rate, derive_seed(cfg.seed, f"dropedge/{epoch}"))
        aug_adj = adj if aug is g else normalize_adjacency(aug)
        grads = backward(model, aug_adj, g.features, targets, unl, weights)
        if not np.isfinite(grads.loss):
            raise NumericError(f"stage 2 loss diverged at epoch {epoch}")
        opt.step(model, grads, first_layer=model.frozen_prefix)
    return model, st


# ---------------------------------------------------------------- pipeline

@dataclass
class Metrics:
    acc_pretrained: float | None = None
    acc_stage1: float | None = None
    acc_stage2: float | None = None
    budget: int = 0
    budget_used: int = 0
    llm_agreement: float | None = None
    selected: list = field(default_factory=list)
    filtered: list = field(default_factory=list)
    status: str = "ok"
    error: str | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_json(self):
        return asdict(self)


def run_llmttt(model, g, adj, split, sel_cfg, annotator, ttt_cfg, selection="hybrid", filter_mode="conf_coe"):
    """Select, annotate, filter, then run both adaptation stages.

    ``annotator`` is any object with ``annotate(nodes) -> records`` and a
    ``ledger`` attribute. A stage failure stops the run and is reported in
    ``Metrics.status`` with whatever was measured before it.
    """
    if sel_cfg.budget < 1:
        raise ConfigError("annotation budget must be >= 1")
    if filter_mode not in FILTER_MODES:
        raise ConfigError(f"filter_mode must be one of {FILTER_MODES}")
    ttt_cfg.validate()
    adj = adj if adj is not None else normalize_adjacency(g)
    test = split.test_mask
    metrics = Metrics(
        budget=sel_cfg.budget,
        seed=ttt_cfg.seed,
        config={"selection": asdict(sel_cfg), "ttt": asdict(ttt_cfg),
                "selection_kind": selection, "filter_mode": filter_mode},
    )
    pred0 = forward(model, adj, g.features)
    metrics.acc_pretrained = accuracy(pred0, g.labels, test)
    stage = "selection"
    try:
        if selection == "hybrid":
            chosen = hybrid_select(g, pred0, test, sel_cfg, adj).chosen
        else:
            chosen = baseline_select(selection, g, pred0, test, sel_cfg.budget, sel_cfg.seed,
                                     sel_cfg.hops, sel_cfg.damping, sel_cfg.tol)
        metrics.selected = [int(v) for v in chosen]

        stage = "annotation"
        records = [r for r in annotator.annotate(chosen) if r.ok]
        metrics.budget_used = annotator.ledger.used
        if metrics.budget_used > sel_cfg.budget:
            raise ConfigError("annotator exceeded the budget")
        if records:
            metrics.llm_agreement = float(np.mean([r.pseudo_label == g.labels[r.node_id] for r in records]))

        stage = "filter"
        if filter_mode == "none" or len(records) < 2:
            kept = records
        else:
            fcfg = ttt_cfg.filter_config()
            if filter_mode == "conf_only":
                fcfg.gamma = 0.0
            kept = filter_annotations(records, fcfg)
        metrics.filtered = [r.node_id for r in kept]

        stage = "stage1"
        if ttt_cfg.stage1_epochs > 0 and kept:
            model = stage1_finetune(model, g, adj, kept, ttt_cfg)
        metrics.acc_stage1 = accuracy(forward(model, adj, g.features), g.labels, test)

        stage = "stage2"
        unlabeled = test.copy()
        unlabeled[metrics.filtered] = False
        if ttt_cfg.stage2_epochs > 0 and unlabeled.sum() >= 2:
            model, _ = stage2_selftrain(model, g, adj, unlabeled, ttt_cfg)
        metrics.acc_stage2 = accuracy(forward(model, adj, g.features), g.labels, test)
    except Exception as exc:  # reported through Metrics, not raised
        logger.error("stage %s failed: %s", stage, exc)
        metrics.status = f"failed:{stage}"
        metrics.error = f"{type(exc).__name__}: {exc}"
        metrics.budget_used = annotator.ledger.used
    return model, metrics
